"""Covariance functions, Gram matrices and jittered Cholesky factorization.

Kernel specs are immutable descriptions holding hyperparameter values in
natural units.  Differentiable evaluation takes an optional ``theta``
mapping of *log* hyperparameters (Tensors) keyed by the names returned from
:func:`log_params`; when omitted the spec's own values are used as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dpocon

from .diffengine import Tensor, cholesky, ops
from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class SEARD:
    """Squared exponential with one lengthscale per input dimension."""

    lengthscales: tuple
    scale: float = 1.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not ls or min(ls) <= 0 or self.scale <= 0:
            raise ValidationError("SE-ARD lengthscales and scale must be positive")

    @property
    def input_dim(self):
        return len(self.lengthscales)


@dataclass(frozen=True)
class Periodic:
    """``scale^2 exp(-2 sin^2(pi (t - t') / period) / lengthscale^2)`` on one feature.

    The period is fixed (never trained).  ``feature`` indexes the input
    column the kernel acts on.
    """

    period: float
    lengthscale: float = 1.0
    scale: float = 1.0
    feature: int = 0

    def __post_init__(self):
        if self.period <= 0 or self.lengthscale <= 0 or self.scale <= 0:
            raise ValidationError("periodic kernel period, lengthscale and scale must be positive")
        if self.feature < 0:
            raise ValidationError("feature index must be non-negative")

    @property
    def input_dim(self):
        return None


@dataclass(frozen=True)
class Sum:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValidationError("a Sum kernel needs at least two children")

    @property
    def input_dim(self):
        dims = {c.input_dim for c in self.children} - {None}
        if len(dims) > 1:
            raise ValidationError(f"Sum children disagree on input dimension: {dims}")
        return dims.pop() if dims else None


def se(lengthscale, scale=1.0, dim=1):
    """Isotropic convenience constructor."""
    return SEARD((float(lengthscale),) * dim, scale)


# -- parameters ---------------------------------------------------------------

def log_params(spec, prefix=""):
    """``name -> log value`` for every trainable hyperparameter of ``spec``."""
    if isinstance(spec, SEARD):
        return {prefix + "log_lengthscales": np.log(np.array(spec.lengthscales)),
                prefix + "log_scale": np.log(np.array(spec.scale))}
    if isinstance(spec, Periodic):
        return {prefix + "log_lengthscale": np.log(np.array(spec.lengthscale)),
                prefix + "log_scale": np.log(np.array(spec.scale))}
    if isinstance(spec, Sum):
        out = {}
        for i, child in enumerate(spec.children):
            out.update(log_params(child, f"{prefix}{i}."))
        return out
    raise TypeError(f"unknown kernel spec {spec!r}")


def register(spec, store, prefix="kernel.", trainable=True):
    """Add ``spec``'s log hyperparameters to a ParamStore as positive entries."""
    for name, value in log_params(spec, prefix).items():
        store.add(name, np.exp(value), positive=True, trainable=trainable)


def sub_params(params, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def with_log_params(spec, values, prefix=""):
    """A copy of ``spec`` with hyperparameters replaced by ``exp(values[...])``."""
    def get(name):
        return np.exp(np.asarray(values[prefix + name], dtype=float))

    if isinstance(spec, SEARD):
        return SEARD(tuple(get("log_lengthscales")), float(get("log_scale")))
    if isinstance(spec, Periodic):
        return Periodic(spec.period, float(get("log_lengthscale")), float(get("log_scale")),
                        spec.feature)
    if isinstance(spec, Sum):
        return Sum(tuple(with_log_params(c, values, f"{prefix}{i}.")
                         for i, c in enumerate(spec.children)))
    raise TypeError(f"unknown kernel spec {spec!r}")


def _theta(spec, theta):
    if theta is None:
        return {k: Tensor(v) for k, v in log_params(spec).items()}
    return theta


# -- evaluation -----------------------------------------------------------------

def _check_dim(spec, X):
    d = spec.input_dim
    if X.ndim != 2:
        raise ValidationError(f"inputs must be a 2D array, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ValidationError(f"kernel expects {d}-dimensional inputs, got {X.shape[1]}")
    if isinstance(spec, Periodic) and spec.feature >= X.shape[1]:
        raise ValidationError(f"periodic feature {spec.feature} out of range for {X.shape[1]}D inputs")


def _as_points(X):
    if isinstance(X, Tensor):
        return X if X.ndim == 2 else ops.reshape(X, (-1, 1))
    X = np.asarray(X, dtype=np.float64)
    return Tensor(X if X.ndim == 2 else X.reshape(-1, 1))


def _cov(spec, X1, X2, theta, prefix=""):
    if isinstance(spec, SEARD):
        ls = ops.exp(theta[prefix + "log_lengthscales"])
        var = ops.exp(2.0 * theta[prefix + "log_scale"])
        d2 = ops.sqdist(X1 / ls, X2 / ls)
        return var * ops.exp(-0.5 * d2)
    if isinstance(spec, Periodic):
        ls = ops.exp(theta[prefix + "log_lengthscale"])
        var = ops.exp(2.0 * theta[prefix + "log_scale"])
        f = spec.feature
        diff = ops.outer_diff(X1[:, f], X2[:, f])
        s = ops.sin(diff * (np.pi / spec.period))
        return var * ops.exp(-2.0 * s * s / (ls * ls))
    if isinstance(spec, Sum):
        out = None
        for i, child in enumerate(spec.children):
            k = _cov(child, X1, X2, theta, f"{prefix}{i}.")
            out = k if out is None else out + k
        return out
    raise TypeError(f"unknown kernel spec {spec!r}")


def _diag(spec, n, theta, prefix=""):
    if isinstance(spec, (SEARD, Periodic)):
        return ops.exp(2.0 * theta[prefix + "log_scale"]) * np.ones(n)
    return sum((_diag(c, n, theta, f"{prefix}{i}.") for i, c in enumerate(spec.children)),
               start=Tensor(np.zeros(n)))


def gram(spec, X1, X2=None, theta=None):
    """Covariance matrix between two point sets as a Tensor.

    ``X2=None`` means the symmetric Gram of ``X1`` with itself.
    """
    theta = _theta(spec, theta)
    X1 = _as_points(X1)
    _check_dim(spec, X1.data)
    if X2 is None:
        return _cov(spec, X1, X1, theta)
    X2 = _as_points(X2)
    _check_dim(spec, X2.data)
    if X1.shape[0] == 0 or X2.shape[0] == 0:
        return Tensor(np.zeros((X1.shape[0], X2.shape[0])))
    return _cov(spec, X1, X2, theta)


def gram_diag(spec, X, theta=None):
    """Prior variances ``k(x_i, x_i)`` without forming the full Gram."""
    theta = _theta(spec, theta)
    X = _as_points(X)
    _check_dim(spec, X.data)
    return _diag(spec, X.shape[0], theta)


def eval_kernel(spec, x1, x2):
    """Scalar covariance between two points."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape:
        raise ValidationError(f"point shapes differ: {x1.shape} vs {x2.shape}")
    return float(gram(spec, x1[None, :], x2[None, :]).data[0, 0])


# -- factorization ----------------------------------------------------------------

JITTER_START = 1e-8
JITTER_MAX = 1e-2
# an exact factor whose estimated reciprocal condition number falls below this
# is treated as singular: solves through it amplify rounding error past usefulness
MIN_RCOND = 1e-12


def _rcond(a, factor):
    rcond, info = dpocon(factor, np.abs(a).sum(axis=0).max(), uplo="L")
    return rcond if info == 0 else 0.0


def jitter_for(a, name="matrix", try_exact=False):
    """Smallest jitter in the escalation ladder that makes ``a`` factorizable.

    Returns ``(jitter, factor)``.  Jitter is relative to the mean diagonal and
    runs 1e-8, 1e-7, ..., 1e-2.  With ``try_exact`` a zero-jitter factorization
    is attempted first and kept unless it is numerically singular.
    """
    a = np.asarray(a)
    n = a.shape[0]
    if try_exact:
        try:
            factor = np.linalg.cholesky(a)
            if n == 0 or _rcond(a, factor) >= MIN_RCOND:
                return 0.0, factor
        except np.linalg.LinAlgError:
            pass
    scale = float(np.mean(np.abs(np.diagonal(a)))) if n else 1.0
    if not np.isfinite(scale):
        raise NumericalError("matrix has non-finite entries", op=f"chol_with_jitter[{name}]")
    if scale == 0.0:
        scale = 1.0
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return jitter, np.linalg.cholesky(a + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise NumericalError(f"not positive definite even with jitter {JITTER_MAX:g} x mean diagonal",
                         op=f"chol_with_jitter[{name}]")


def chol_with_jitter(a, name="matrix", try_exact=False):
    """Lower Cholesky factor of ``a + jitter * I`` (differentiable in ``a``)."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    if a.shape[0] == 0:
        return Tensor(np.zeros((0, 0)))
    jitter, factor = jitter_for(a.data, name, try_exact)
    if jitter == 0.0:
        return cholesky(a, name=name, factor=factor)
    # the jitter is a fixed multiple of the mean |diagonal|; keep that dependence
    # on the tape so gradients stay exact
    diag = ops.diagonal(a)
    scale = ops.mean(ops.where(diag.data >= 0, diag, -diag))
    rel = jitter / float(scale.data) if float(scale.data) > 0 else 0.0
    amount = scale * rel if rel else jitter
    return cholesky(ops.add_diagonal(a, amount), name=name, factor=factor)


# -- serialization ----------------------------------------------------------------

def to_dict(spec):
    if isinstance(spec, SEARD):
        return {"type": "se_ard", "lengthscales": list(spec.lengthscales), "scale": spec.scale}
    if isinstance(spec, Periodic):
        return {"type": "periodic", "period": spec.period, "lengthscale": spec.lengthscale,
                "scale": spec.scale, "feature": spec.feature}
    if isinstance(spec, Sum):
        return {"type": "sum", "children": [to_dict(c) for c in spec.children]}
    raise TypeError(f"unknown kernel spec {spec!r}")


_FIELDS = {
    "se_ard": {"type", "lengthscales", "scale"},
    "periodic": {"type", "period", "lengthscale", "scale", "feature"},
    "sum": {"type", "children"},
}


def from_dict(d):
    kind = d.get("type")
    if kind not in _FIELDS:
        raise ValidationError(f"unknown kernel type {kind!r}")
    unknown = set(d) - _FIELDS[kind]
    if unknown:
        raise ValidationError(f"unknown keys for {kind} kernel: {sorted(unknown)}")
    if kind == "se_ard":
        return SEARD(tuple(d["lengthscales"]), float(d.get("scale", 1.0)))
    if kind == "periodic":
        return Periodic(float(d["period"]), float(d.get("lengthscale", 1.0)),
                        float(d.get("scale", 1.0)), int(d.get("feature", 0)))
    return Sum(tuple(from_dict(c) for c in d["children"]))
