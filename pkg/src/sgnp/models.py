"""Sparse Gaussian neural processes, NP baselines, losses and meta-training.

Model kinds
-----------
``SGNP``       inducing inputs from a set function; ``q(u)`` from the Titsias
               collapse (Gaussian likelihood only).
``ConvSGNP``   inducing inputs from a set function; ``q(u)`` mean and kvv
               covariance from a ConvDeepSet queried at the inducing inputs.
``sConvSGNP``  classification variant: a fixed-weight blend of a Titsias
               collapse on relabelled data and the ConvDeepSet estimate.
``CNP``        DeepSet encoder, MLP decoder, independent Gaussian predictive.
``ConvGNP``    ConvDeepSet mean and kvv covariance directly over the targets.
``GP``         non-trainable oracle using the spec's kernel and noise (exact
               GP for regression, a per-task fitted SVGP for classification).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.special import log_ndtr

from . import kernels as kern
from .diffengine import (AdamState, ParamStore, Tensor, adam_step, data_of, linear_lr,
                         no_grad, ops, value_and_grad)
from .errors import NumericalError, TrainingError, ValidationError
from .gp_core import (LOG_2PI, Bernoulli, Gaussian, GaussianPredictive, InducingState,
                      collapsed_elbo, elbo, exact_posterior, gaussian_logpdf,
                      gaussian_logpdf_diag, probit_predict, sparse_predict, titsias_collapse)
from .setfn import (MLP, ConvDeepSet, DeepSet, InducingNet, SetTransformer, kvv_covariance,
                    query_functional)

KINDS = ("SGNP", "ConvSGNP", "sConvSGNP", "CNP", "ConvGNP", "GP")
SPARSE_KINDS = ("SGNP", "ConvSGNP", "sConvSGNP")
NP_KINDS = ("CNP", "ConvGNP")
MIN_VARIANCE = 1e-6


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model's architecture.

    ``kernel`` and ``noise`` are the initial values when hyperparameters are
    trained (``train_hypers``) and the fixed values otherwise.
    """

    kind: str
    input_dim: int = 1
    likelihood: str = "gaussian"
    kernel: object = field(default_factory=lambda: kern.se(1.0))
    noise: float = 0.1
    train_hypers: bool = True
    # inducing-input network
    m: int = 32
    f_net: str = "transformer"
    token_dim: int = 32
    heads: int = 8
    ff_width: int = 32
    blocks: int = 2
    deepset_width: int = 128
    deepset_layers: int = 3
    translation_equivariant: bool = True
    # ConvDeepSet heads
    spacing: float = 0.02
    conv_channels: int = 32
    conv_layers: int = 3
    conv_kernel: int = 5
    d_k: int = 8
    max_cells: int = 250_000
    # classification blend
    alpha: float = 0.1
    relabel: float = 2.0
    pseudo_noise: float = 0.5
    # CNP
    cnp_width: int = 128
    cnp_layers: int = 3
    # Monte Carlo draws for Bernoulli predictions at evaluation time
    mc_eval: int = 64
    # per-task SVGP oracle for classification
    oracle_steps: int = 300

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.likelihood not in ("gaussian", "bernoulli"):
            raise ValidationError(f"unknown likelihood {self.likelihood!r}")
        if self.kind == "SGNP" and self.likelihood != "gaussian":
            raise ValidationError("SGNP needs a Gaussian likelihood (use sConvSGNP for classification)")
        if self.kind == "sConvSGNP" and self.likelihood != "bernoulli":
            raise ValidationError("sConvSGNP is the classification variant; set likelihood: bernoulli")
        if self.m < 1:
            raise ValidationError("inducing count m must be at least 1")
        if not 0 <= self.alpha <= 1:
            raise ValidationError("blend weight alpha must lie in [0, 1]")
        if self.relabel <= 0 or self.pseudo_noise <= 0 or self.noise <= 0:
            raise ValidationError("relabel constant, pseudo-noise and noise must be positive")
        if self.f_net not in ("transformer", "deepset"):
            raise ValidationError(f"unknown inducing-input network {self.f_net!r}")
        if self.kind in ("ConvSGNP", "sConvSGNP", "ConvGNP") and self.input_dim > 2:
            raise ValidationError(f"{self.kind} uses grids and supports at most 2 input dimensions")
        if self.input_dim < 1:
            raise ValidationError("input_dim must be at least 1")
        dims = self.kernel.input_dim
        if self.kind not in NP_KINDS and dims is not None and dims != self.input_dim:
            raise ValidationError(f"kernel is {dims}D but input_dim is {self.input_dim}")

    @property
    def lik(self):
        return Gaussian(self.noise) if self.likelihood == "gaussian" else Bernoulli()

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = kern.to_dict(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model keys: {sorted(unknown)}")
        d = dict(d)
        if "kernel" in d and isinstance(d["kernel"], dict):
            d["kernel"] = kern.from_dict(d["kernel"])
        if "kind" not in d:
            raise ValidationError("model spec needs a 'kind'")
        return cls(**d)


@dataclass
class Prediction:
    """Latent predictive plus observation noise (regression) or probabilities."""

    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray = None
    noise_var: float = 0.0
    prob: np.ndarray = None
    seconds: float = 0.0


class Model:
    """A model kind bound to its parameters."""

    def __init__(self, spec, store=None, seed=0):
        self.spec = spec
        self._build()
        if store is None:
            store = ParamStore()
            rng = np.random.default_rng(seed)
            self._init(store, rng)
        self.store = store

    # -- construction -------------------------------------------------------------------

    def _build(self):
        s = self.spec
        d = s.input_dim
        self.f = None
        if s.kind in SPARSE_KINDS:
            if s.f_net == "transformer":
                body = SetTransformer(d, s.token_dim, s.heads, s.ff_width, s.blocks)
            else:
                body = DeepSet(d, s.deepset_width, s.deepset_layers, s.deepset_width)
            self.f = InducingNet(body, s.m, d, s.translation_equivariant)
        self.conv = None
        if s.kind in ("ConvSGNP", "sConvSGNP", "ConvGNP"):
            self.conv = ConvDeepSet(d, s.spacing, 1 + s.d_k + 1, s.conv_channels, s.conv_layers,
                                    s.conv_kernel, max_cells=s.max_cells)
        if s.kind == "CNP":
            self.encoder = DeepSet(d, s.cnp_width, s.cnp_layers, s.cnp_width)
            self.decoder = MLP((s.cnp_width + d,) + (s.cnp_width,) * s.cnp_layers + (2,))

    def _init(self, store, rng):
        s = self.spec
        if self.f is not None:
            self.f.init(store, "f.", rng)
        if self.conv is not None:
            self.conv.init(store, "conv.", rng)
            store.add("kvv.log_lengthscale", 1.0, positive=True)
        if s.kind == "CNP":
            self.encoder.init(store, "cnp.enc.", rng)
            self.decoder.init(store, "cnp.dec.", rng)
        if s.kind in SPARSE_KINDS or s.kind == "GP":
            trainable = s.train_hypers and s.kind != "GP"
            kern.register(s.kernel, store, "kernel.", trainable=trainable)
            if s.likelihood == "gaussian":
                store.add("lik.log_noise", s.noise, positive=True, trainable=trainable)
        if s.kind in NP_KINDS and s.likelihood == "gaussian":
            store.add("np.log_noise", s.noise, positive=True)

    # -- shared pieces ------------------------------------------------------------------

    def _theta(self, p):
        return kern.sub_params(p, "kernel.")

    def _noise(self, p):
        if "lik.log_noise" in p:
            return ops.exp(p["lik.log_noise"])
        return None

    def inducing_inputs(self, p, Xc, yc):
        return self.f(p, "f.", Xc, yc)

    def _conv_heads(self, p, Xc, yc, Q, *cover):
        emb = self.conv(p, "conv.", Xc, yc, Q, *cover)
        h = query_functional(emb, Q)
        dk = self.spec.d_k
        mean = h[:, 0]
        r_k = h[:, 1:1 + dk]
        r_v = ops.softplus(h[:, 1 + dk])
        S = kvv_covariance(r_k, r_v, ops.exp(p["kvv.log_lengthscale"]))
        return mean, S

    def _labels(self, y):
        y = np.asarray(y, dtype=float)
        if self.spec.likelihood == "bernoulli" and not np.all((y == 0) | (y == 1)):
            raise ValidationError("classification labels must be 0 or 1")
        return y

    def inducing_state(self, p, Xc, yc):
        """``q(u)`` for the sparse kinds, as Tensors over ``p``."""
        s = self.spec
        yc = self._labels(yc)
        Z = self.inducing_inputs(p, Xc, yc)
        theta = self._theta(p)
        if s.kind == "SGNP":
            return titsias_collapse(Xc, yc, Z, s.kernel, self._noise(p), theta)
        if s.kind == "ConvSGNP":
            mean, S = self._conv_heads(p, Xc, yc, Z)
            return InducingState(Z, mean, S)
        if s.kind == "sConvSGNP":
            return self._blend(p, Xc, yc, Z, theta)
        raise ValidationError(f"{s.kind} has no inducing state")

    def _blend(self, p, Xc, yc, Z, theta, alpha=None):
        s = self.spec
        alpha = s.alpha if alpha is None else alpha
        y_pm = s.relabel * (2.0 * yc - 1.0)
        tit = titsias_collapse(Xc, y_pm, Z, s.kernel, s.pseudo_noise, theta)
        if alpha == 0:
            return tit
        mean, S = self._conv_heads(p, Xc, yc, Z)
        if alpha == 1:
            return InducingState(Z, mean, S)
        return InducingState(Z, (1 - alpha) * tit.mean + alpha * mean,
                             (1 - alpha) * tit.cov + alpha * S)

    # -- prediction ---------------------------------------------------------------------

    def latent(self, p, Xc, yc, Xq, full_cov=True, rng=None):
        """Latent Gaussian predictive at ``Xq`` (Tensors), plus the noise variance."""
        s = self.spec
        Xc, Xq = _as_points(Xc, s.input_dim), _as_points(Xq, s.input_dim)
        yc = self._labels(yc)
        if s.kind in SPARSE_KINDS:
            state = self.inducing_state(p, Xc, yc)
            pred = sparse_predict(state, Xq, s.kernel, self._theta(p), full_cov=full_cov)
            noise = self._noise(p)
            return pred, (noise * noise if noise is not None else 0.0)
        if s.kind == "GP":
            noise = float(np.exp(p["lik.log_noise"].data)) if "lik.log_noise" in p else None
            if s.likelihood == "gaussian":
                pred = exact_posterior(Xc, yc, Xq, s.kernel, noise, full_cov=full_cov)
                return pred, noise ** 2
            state = fit_svgp(Xc, yc, s.kernel, s.m, s.oracle_steps, rng)
            return sparse_predict(state, Xq, s.kernel, full_cov=full_cov), 0.0
        if s.kind == "ConvGNP":
            mean, cov = self._conv_heads(p, Xc, yc, Xq)
            noise = ops.exp(2.0 * p["np.log_noise"]) if "np.log_noise" in p else 0.0
            return GaussianPredictive(mean, ops.diagonal(cov), cov), noise
        if s.kind == "CNP":
            r = self.encoder(p, "cnp.enc.", Xc, yc)
            nq = Xq.shape[0]
            rq = ops.broadcast_to(ops.reshape(r, (1, -1)), (nq, r.shape[0]))
            out = self.decoder(p, "cnp.dec.", ops.concatenate([rq, ops.as_tensor(Xq)], axis=1))
            var = ops.softplus(out[:, 1]) + MIN_VARIANCE
            return GaussianPredictive(out[:, 0], var), 0.0
        raise ValidationError(f"unknown kind {s.kind}")

    def predict(self, Xc, yc, Xq, full_cov=False, rng=None):
        """Numpy predictions at ``Xq`` given a context; timing included."""
        s = self.spec
        start = time.perf_counter()
        p = self.store.as_constants()
        if rng is None:
            rng = np.random.default_rng(0)
        with no_grad():
            pred, noise = self.latent(p, Xc, yc, Xq, full_cov=full_cov or s.kind == "ConvGNP", rng=rng)
        mean, var = data_of(pred.mean), np.maximum(data_of(pred.var), 0.0)
        cov = data_of(pred.cov) if (full_cov and pred.cov is not None) else None
        out = Prediction(mean, var, cov, float(data_of(noise)))
        if s.likelihood == "bernoulli":
            out.prob = self._probabilities(mean, var, rng)
        out.seconds = time.perf_counter() - start
        return out

    def _probabilities(self, mean, var, rng):
        s = self.spec
        if s.kind in ("ConvSGNP", "sConvSGNP") and s.mc_eval > 0:
            from scipy.special import ndtr

            eps = rng.standard_normal((mean.shape[0], s.mc_eval))
            return ndtr(mean[:, None] + np.sqrt(var)[:, None] * eps).mean(axis=1)
        return probit_predict(mean, var)

    # -- losses -----------------------------------------------------------------------

    def avi_loss(self, p, tasks, rng, mc_draws=5):
        """Mean negative ELBO with each whole task as its own context."""
        s = self.spec
        if s.kind not in SPARSE_KINDS:
            raise ValidationError(f"avi_loss is for {SPARSE_KINDS}, not {s.kind}")
        theta = self._theta(p)
        total = 0.0
        for t in tasks:
            with _task_errors(t):
                y = self._labels(t.y)
                if s.kind == "SGNP":
                    Z = self.inducing_inputs(p, t.X, y)
                    val = collapsed_elbo(t.X, y, Z, s.kernel, self._noise(p), theta)
                else:
                    state = self.inducing_state(p, t.X, y)
                    draws = None
                    if s.likelihood == "bernoulli":
                        draws = rng.standard_normal((t.n, mc_draws))
                    val = elbo(t.X, y, state, s.kernel, s.lik, theta, self._noise(p), draws)
                _check_finite(val, "elbo")
            total = total - val
        return total / len(tasks)

    def npml_loss(self, p, tasks, rng, p_range=(0.25, 0.75)):
        """Mean negative per-target log predictive likelihood over a random split.

        Every point is a target; the context is a random proportion drawn from
        ``p_range``.  Tasks that already carry a split are used as they are.  ConvGNP scores the joint Gaussian divided by the target
        count, CNP the mean of independent densities.
        """
        from .data import split_context_target

        s = self.spec
        if s.kind not in NP_KINDS:
            raise ValidationError(f"npml_loss is for {NP_KINDS}, not {s.kind}")
        total = 0.0
        for t in tasks:
            split = t if t.context is not None else split_context_target(
                t, p_range, rng, mode="full-target")
            with _task_errors(t):
                val = self.target_log_lik(p, split.Xc, split.yc, split.Xt, split.yt)
                _check_finite(val, "log predictive")
            total = total - val
        return total / len(tasks)

    def target_log_lik(self, p, Xc, yc, Xt, yt):
        """Differentiable per-target-point log predictive likelihood."""
        s = self.spec
        yt = self._labels(yt)
        n_t = len(yt)
        pred, noise = self.latent(p, Xc, yc, Xt, full_cov=s.kind == "ConvGNP")
        if s.likelihood == "bernoulli":
            z = pred.mean / ops.sqrt(1.0 + pred.var)
            return ops.mean(ops.log_ndtr(z * (2.0 * yt - 1.0)))
        if s.kind == "CNP":
            return ops.mean(gaussian_logpdf_diag(yt, pred.mean, pred.var))
        return gaussian_logpdf(yt, pred.mean, ops.add_diagonal(pred.cov, noise)) / n_t

    def loss(self, p, tasks, rng, p_range=(0.25, 0.75), mc_draws=5):
        if self.spec.kind in SPARSE_KINDS:
            return self.avi_loss(p, tasks, rng, mc_draws)
        if self.spec.kind in NP_KINDS:
            return self.npml_loss(p, tasks, rng, p_range)
        raise ValidationError(f"{self.spec.kind} is not trainable")


class _task_errors:
    """Attach the task name to numerical failures raised inside the block."""

    def __init__(self, task):
        self.task = task

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, NumericalError) and exc.task is None:
            message = str(exc).split(" | ")[0]
            raise NumericalError(message, op=exc.op, task=self.task.name or "?") from exc
        return False


def _check_finite(value, op):
    if not np.isfinite(float(data_of(value))):
        raise NumericalError(f"non-finite {op} term", op=op)


def _as_points(X, d):
    X = np.asarray(data_of(X), dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, d)
    if X.shape[1] != d:
        raise ValidationError(f"expected {d}D inputs, got {X.shape[1]}D")
    return X


# -- per-task SVGP oracle for classification --------------------------------------------

def fit_svgp(X, y, kernel, m, steps, rng, lr=0.05):
    """Fit ``q(u)`` of a Bernoulli SVGP with fixed kernel by Adam on the ELBO.

    Inducing inputs are (up to ``m``) context inputs; ``S`` is parameterised by
    a lower-triangular factor.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    if X.shape[0] == 0:
        Z = np.zeros((1, kernel.input_dim or 1))
        return InducingState(Z, np.zeros(1), kern.gram(kernel, Z).data)
    Z = X[:m] if X.shape[0] <= m else X[np.sort(rng.choice(X.shape[0], m, replace=False))]
    Kuu = kern.gram(kernel, Z).data
    L0 = kern.chol_with_jitter(Kuu, "K_uu").data
    store = ParamStore()
    store.add("mean", np.zeros(Z.shape[0]))
    store.add("chol", L0)
    mask = np.tril(np.ones_like(L0))
    state = AdamState()
    lik = Bernoulli()

    def neg_elbo(p, draws):
        q = InducingState.from_chol(Z, p["mean"], p["chol"] * mask)
        return -elbo(X, y, q, kernel, lik, noise_draws=draws)

    for _ in range(steps):
        draws = rng.standard_normal((X.shape[0], 5))
        try:
            value_and_grad(neg_elbo, store, draws)
        except NumericalError:
            break
        adam_step(store, state, lr)
    L = store["chol"] * mask
    return InducingState(Z, store["mean"].copy(), L @ L.T)


# -- meta-training ------------------------------------------------------------------------

@dataclass(frozen=True)
class MetaTrainConfig:
    steps: int = 20_000
    batch_size: int = 5
    lr_start: float = 1e-3
    lr_end: float = 5e-5
    seed: int = 0
    p_range: tuple = (0.25, 0.75)
    mc_draws: int = 5
    trace_every: int = 50
    max_nonfinite: int = 10

    def __post_init__(self):
        object.__setattr__(self, "p_range", tuple(float(v) for v in self.p_range))
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be at least 1")
        lo, hi = self.p_range
        if not 0 < lo <= hi < 1:
            raise ValidationError(f"p_range must satisfy 0 < low <= high < 1, got {self.p_range}")
        if self.mc_draws < 1:
            raise ValidationError("mc_draws must be at least 1")
        if self.trace_every < 1:
            raise ValidationError("trace_every must be at least 1")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: Model
    trace: list          # rows of (step, lr, loss)
    adam: AdamState
    step: int


def _step_rng(seed, step):
    return np.random.default_rng([int(seed), int(step)])


def _batch(meta, rng, size):
    n = len(meta)
    idx = rng.choice(n, size, replace=n < size)
    return [meta[int(i)] for i in idx]


def meta_train(model, meta, config, adam=None, start_step=0, trace=None, callback=None):
    """Adam on the model's loss over random task minibatches.

    Each step draws its batch and noise from an RNG seeded by ``(seed, step)``,
    so a run resumed from ``start_step`` with the saved Adam state continues
    exactly as the uninterrupted run would.  The trace records
    ``(step, lr, loss)`` every ``trace_every`` steps and once more after the
    final update.  ``callback(step, model, adam, trace)`` runs after every
    update.
    """
    if len(meta) == 0:
        raise ValidationError("empty meta-dataset")
    adam = AdamState() if adam is None else adam
    trace = [] if trace is None else list(trace)
    store = model.store
    bad = 0
    errors = []
    for step in range(start_step, config.steps):
        rng = _step_rng(config.seed, step)
        tasks = _batch(meta, rng, config.batch_size)
        lr = linear_lr(step, config.steps, config.lr_start, config.lr_end)
        try:
            value, _ = value_and_grad(model.loss, store, tasks, rng, config.p_range,
                                       config.mc_draws)
        except NumericalError as exc:
            bad += 1
            errors.append(f"step {step}: {exc}")
            if bad > config.max_nonfinite:
                raise TrainingError(f"aborted after {bad} consecutive non-finite losses",
                                    {"step": step, "errors": errors[-bad:]}) from exc
            continue
        bad = 0
        if step % config.trace_every == 0:
            trace.append((step, lr, value))
        adam_step(store, adam, lr)
        if callback is not None:
            callback(step + 1, model, adam, trace)
    final = config.steps
    if not trace or trace[-1][0] != final:
        rng = _step_rng(config.seed, final)
        with no_grad():
            value = float(model.loss(store.as_constants(), _batch(meta, rng, config.batch_size),
                                     rng, config.p_range, config.mc_draws).data)
        trace.append((final, config.lr_end, value))
    return TrainResult(model, trace, adam, final)


# -- evaluation -------------------------------------------------------------------------

def task_metrics(model, task, rng):
    """``(log-likelihood per target point, MAE, prediction seconds)`` on a split task."""
    s = model.spec
    pred = model.predict(task.Xc, task.yc, task.Xt, full_cov=s.kind not in ("CNP",), rng=rng)
    yt = task.yt
    if s.likelihood == "bernoulli":
        prob = np.clip(pred.prob, 1e-12, 1 - 1e-12)
        ll = float(np.mean(yt * np.log(prob) + (1 - yt) * np.log1p(-prob)))
        return ll, float(np.mean(np.abs(prob - yt))), pred.seconds
    if s.kind == "CNP":
        ll = float(np.mean(-0.5 * LOG_2PI - 0.5 * np.log(pred.var) - 0.5 * (yt - pred.mean) ** 2 / pred.var))
    else:
        cov = pred.cov + pred.noise_var * np.eye(len(yt))
        ll = float(gaussian_logpdf(yt, pred.mean, cov).data) / len(yt)
    return ll, float(np.mean(np.abs(pred.mean - yt))), pred.seconds


def evaluate(model, tasks, seed=0):
    """Per-task metrics on tasks that already carry a context/target split."""
    rows = []
    for i, t in enumerate(tasks):
        if t.context is None or t.target is None:
            raise ValidationError(f"task {t.name!r} has no context/target split")
        ll, mae, secs = task_metrics(model, t, np.random.default_rng([int(seed), i]))
        rows.append({"task": t.name or str(i), "n_context": len(t.context),
                     "n_target": len(t.target), "ll": ll, "mae": mae, "seconds": secs})
    lls = np.array([r["ll"] for r in rows])
    maes = np.array([r["mae"] for r in rows])
    sem = lambda a: float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0
    return {"tasks": rows,
            "aggregate": {"ll_mean": float(lls.mean()), "ll_sem": sem(lls),
                          "mae_mean": float(maes.mean()), "mae_sem": sem(maes),
                          "seconds_mean": float(np.mean([r["seconds"] for r in rows])),
                          "count": len(rows)}}
