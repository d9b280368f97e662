"""Exact and sparse variational GP inference.

All routines accept numpy arrays or Tensors and return Tensors, so they can
sit inside a differentiated loss.  Sparse routines only ever factorize
``m x m`` matrices; the largest data-sized arrays they build are ``m x n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffengine import Tensor, data_of, ops, solve_triangular
from .diffengine.linalg import logdet_from_chol
from .errors import ValidationError
from .kernels import chol_with_jitter, gram, gram_diag

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Gaussian:
    """Additive Gaussian observation noise with standard deviation ``noise``."""

    noise: float = 0.1

    def __post_init__(self):
        if self.noise <= 0:
            raise ValidationError("Gaussian likelihood noise must be positive")


@dataclass(frozen=True)
class Bernoulli:
    """Binary labels in {0, 1} with ``p(y=1 | f) = Phi(f)`` (probit link)."""


@dataclass
class InducingState:
    """Inducing inputs ``Z`` and the Gaussian ``q(u) = N(mean, cov)`` over them."""

    Z: object
    mean: object
    cov: object

    @classmethod
    def from_chol(cls, Z, mean, cov_chol):
        L = cov_chol if isinstance(cov_chol, Tensor) else Tensor(cov_chol)
        return cls(Z, mean, L @ L.T)

    def numpy(self):
        return InducingState(data_of(self.Z), data_of(self.mean), data_of(self.cov))


@dataclass
class GaussianPredictive:
    """Predictive mean plus either a full covariance or marginal variances."""

    mean: object
    var: object
    cov: object = None

    def numpy(self):
        return GaussianPredictive(data_of(self.mean), data_of(self.var),
                                  None if self.cov is None else data_of(self.cov))


def _points(X):
    X = data_of(X) if not isinstance(X, Tensor) else X
    if isinstance(X, Tensor):
        return X if X.ndim == 2 else ops.reshape(X, (-1, 1))
    return X if X.ndim == 2 else X.reshape(-1, 1)


def _noise_var(noise):
    return noise * noise if isinstance(noise, Tensor) else float(noise) ** 2


# -- exact GP -------------------------------------------------------------------

def exact_posterior(X, y, Xq, kernel, noise, theta=None, full_cov=True):
    """Exact GP regression posterior over latent ``f`` at ``Xq``."""
    X, Xq = _points(X), _points(Xq)
    if X.shape[0] == 0:
        kqq = gram(kernel, Xq, theta=theta)
        return GaussianPredictive(Tensor(np.zeros(Xq.shape[0])), ops.diagonal(kqq),
                                  kqq if full_cov else None)
    K = ops.add_diagonal(gram(kernel, X, theta=theta), _noise_var(noise))
    L = chol_with_jitter(K, "K_ff + noise", try_exact=True)
    Kfq = gram(kernel, X, Xq, theta=theta)
    W = solve_triangular(L, Kfq)
    alpha = solve_triangular(L, y)
    mean = W.T @ alpha
    if full_cov:
        cov = gram(kernel, Xq, theta=theta) - W.T @ W
        return GaussianPredictive(mean, ops.diagonal(cov), cov)
    var = gram_diag(kernel, Xq, theta=theta) - ops.sum_(W * W, axis=0)
    return GaussianPredictive(mean, var)


def log_marginal(X, y, kernel, noise, theta=None):
    """``log N(y; 0, K_ff + noise^2 I)``."""
    X = _points(X)
    n = X.shape[0]
    K = ops.add_diagonal(gram(kernel, X, theta=theta), _noise_var(noise))
    L = chol_with_jitter(K, "K_ff + noise", try_exact=True)
    alpha = solve_triangular(L, y)
    return -0.5 * (alpha @ alpha) - 0.5 * logdet_from_chol(L) - 0.5 * n * LOG_2PI


# -- sparse variational GP ----------------------------------------------------------

def titsias_collapse(X, y, Z, kernel, noise, theta=None):
    """Optimal ``q(u)`` for a Gaussian likelihood.

    ``mean = s^-2 Kuu Sigma Kuf y`` and ``cov = Kuu Sigma Kuu`` with
    ``Sigma = (Kuu + s^-2 Kuf Kfu)^-1``, computed through the whitened system
    ``B = I + A A^T``, ``A = L^-1 Kuf / s`` so only m x m matrices are factorized.
    An empty context returns the prior ``N(0, Kuu)`` (plus any factorization jitter).
    """
    X, Z = _points(X), _points(Z)
    if Z.shape[0] == 0:
        raise ValidationError("need at least one inducing point")
    Kuu = gram(kernel, Z, theta=theta)
    L = chol_with_jitter(Kuu, "K_uu", try_exact=True)
    if X.shape[0] == 0:
        # L L^T carries the same jitter the conditional will factor with
        return InducingState(Z, Tensor(np.zeros(Z.shape[0])), L @ L.T)
    Kuf = gram(kernel, Z, X, theta=theta)
    A = solve_triangular(L, Kuf) / noise
    B = ops.add_diagonal(A @ A.T, 1.0)
    LB = chol_with_jitter(B, "I + A A^T", try_exact=True)
    c = solve_triangular(LB, A @ y) / noise
    mean = L @ solve_triangular(LB, c, trans=True)
    W = solve_triangular(LB, L.T)
    return InducingState(Z, mean, W.T @ W)


class _Conditional:
    """Shared factorization for predicting from ``q(u)`` at query points."""

    def __init__(self, state, kernel, theta):
        self.Z = _points(state.Z)
        self.Kuu = gram(kernel, self.Z, theta=theta)
        self.Lk = chol_with_jitter(self.Kuu, "K_uu", try_exact=True)
        self.alpha = solve_triangular(self.Lk, state.mean)
        X1 = solve_triangular(self.Lk, state.cov)
        M = solve_triangular(self.Lk, X1.T)
        self.M = 0.5 * (M + M.T)  # whitened covariance Lk^-1 S Lk^-T

    def predict(self, Xq, kernel, theta, full_cov):
        Xq = _points(Xq)
        Kuq = gram(kernel, self.Z, Xq, theta=theta)
        W = solve_triangular(self.Lk, Kuq)
        mean = W.T @ self.alpha
        MW = self.M @ W
        if full_cov:
            cov = gram(kernel, Xq, theta=theta) - W.T @ W + W.T @ MW
            return GaussianPredictive(mean, ops.diagonal(cov), cov)
        var = gram_diag(kernel, Xq, theta=theta) - ops.sum_(W * W, axis=0) + ops.sum_(W * MW, axis=0)
        return GaussianPredictive(mean, var)

    def kl(self):
        m = self.M.shape[0]
        LM = chol_with_jitter(self.M, "whitened S", try_exact=True)
        return 0.5 * (ops.sum_(ops.diagonal(self.M)) + self.alpha @ self.alpha - m
                      - logdet_from_chol(LM))


def sparse_predict(state, Xq, kernel, theta=None, full_cov=False):
    """Predictive over latent ``f`` at ``Xq`` implied by ``q(u)``.

    Mean ``A m`` and covariance ``K_qq + A (S - Kuu) A^T`` with
    ``A = K_qu Kuu^-1``.  ``full_cov=False`` returns marginal variances only,
    at ``O(t m^2)`` cost.
    """
    if _points(Xq).shape[1] != _points(state.Z).shape[1]:
        raise ValidationError("query and inducing inputs differ in dimensionality")
    return _Conditional(state, kernel, theta).predict(Xq, kernel, theta, full_cov)


def kl_gaussians(state, Kuu):
    """``KL[N(mean, cov) || N(0, Kuu)]`` evaluated in the Kuu-whitened basis.

    Both factorizations try zero jitter first, so ``S = Kuu`` gives zero to
    rounding whenever ``Kuu`` is numerically positive definite.
    """
    Kuu = Kuu if isinstance(Kuu, Tensor) else Tensor(Kuu)
    if Kuu.shape[0] != data_of(state.mean).shape[0]:
        raise ValidationError("state and Kuu shapes disagree")
    Lk = chol_with_jitter(Kuu, "K_uu", try_exact=True)
    alpha = solve_triangular(Lk, state.mean)
    X1 = solve_triangular(Lk, state.cov)
    M = solve_triangular(Lk, X1.T)
    M = 0.5 * (M + M.T)
    LM = chol_with_jitter(M, "whitened S", try_exact=True)
    return 0.5 * (ops.sum_(ops.diagonal(M)) + alpha @ alpha - Kuu.shape[0] - logdet_from_chol(LM))


def expected_log_lik(y, mean, var, lik, noise=None, noise_draws=None):
    """Per-point ``E_{N(f; mean, var)}[log p(y | f)]``.

    Gaussian: closed form (``noise`` overrides ``lik.noise`` and may be a
    Tensor).  Bernoulli: Monte Carlo over the supplied standard-normal
    ``noise_draws`` of shape ``(n, draws)``.
    """
    if isinstance(lik, Gaussian):
        s2 = _noise_var(lik.noise if noise is None else noise)
        r = y - mean
        return -0.5 * LOG_2PI - 0.5 * ops.log(ops.as_tensor(s2)) - 0.5 * (r * r + var) / s2
    if isinstance(lik, Bernoulli):
        if noise_draws is None:
            raise ValidationError("Bernoulli expected log-likelihood needs noise_draws")
        eps = np.asarray(noise_draws, dtype=float)
        if eps.ndim == 1:
            eps = eps[:, None]
        sign = 2.0 * np.asarray(y, dtype=float) - 1.0
        v = ops.where(data_of(var) > 1e-12, var, 1e-12)
        f = ops.reshape(mean, (-1, 1)) + ops.reshape(ops.sqrt(v), (-1, 1)) * eps
        return ops.mean(ops.log_ndtr(f * sign[:, None]), axis=1)
    raise TypeError(f"unknown likelihood {lik!r}")


def elbo(X, y, state, kernel, lik, theta=None, noise=None, noise_draws=None):
    """``sum_i E_q(f_i)[log p(y_i | f_i)] - KL[q(u) || p(u)]``.

    For a Bernoulli likelihood ``noise_draws`` (shape ``(n, draws)``) must be
    supplied; 5 draws per point is the training default.
    """
    cond = _Conditional(state, kernel, theta)
    X = _points(X)
    if X.shape[0] == 0:
        return -cond.kl()
    pred = cond.predict(X, kernel, theta, full_cov=False)
    ell = expected_log_lik(y, pred.mean, pred.var, lik, noise, noise_draws)
    return ops.sum_(ell) - cond.kl()


def collapsed_elbo(X, y, Z, kernel, noise, theta=None):
    """The Titsias bound ``log N(y; 0, Q + s^2 I) - tr(K - Q) / (2 s^2)``.

    Equal to :func:`elbo` at the :func:`titsias_collapse` optimum but cheaper
    and better conditioned, since it never forms ``S``.
    """
    X, Z = _points(X), _points(Z)
    n = X.shape[0]
    if n == 0:
        return Tensor(0.0)
    s2 = _noise_var(noise)
    Kuu = gram(kernel, Z, theta=theta)
    L = chol_with_jitter(Kuu, "K_uu", try_exact=True)
    Kuf = gram(kernel, Z, X, theta=theta)
    A = solve_triangular(L, Kuf) / noise
    B = ops.add_diagonal(A @ A.T, 1.0)
    LB = chol_with_jitter(B, "I + A A^T", try_exact=True)
    c = solve_triangular(LB, A @ y) / noise
    kdiag = gram_diag(kernel, X, theta=theta)
    log_s2 = ops.log(ops.as_tensor(s2))
    return (-0.5 * n * LOG_2PI - 0.5 * logdet_from_chol(LB) - 0.5 * n * log_s2
            - 0.5 * ops.sum_(y * y) / s2 + 0.5 * (c @ c)
            - 0.5 * ops.sum_(kdiag) / s2 + 0.5 * ops.sum_(A * A))


def probit_predict(mean, var):
    """``P(y=1) = Phi(mean / sqrt(1 + var))`` for a Gaussian latent marginal."""
    mean = data_of(mean)
    var = np.maximum(data_of(var), 0.0)
    from scipy.special import ndtr

    return ndtr(mean / np.sqrt(1.0 + var))


def gaussian_logpdf(y, mean, cov):
    """Joint ``log N(y; mean, cov)`` via a jittered Cholesky factor."""
    r = y - mean
    n = data_of(r).shape[0]
    L = chol_with_jitter(cov, "predictive covariance", try_exact=True)
    a = solve_triangular(L, r)
    return -0.5 * (a @ a) - 0.5 * logdet_from_chol(L) - 0.5 * n * LOG_2PI


def gaussian_logpdf_diag(y, mean, var):
    """Per-point independent Gaussian log densities."""
    r = y - mean
    return -0.5 * LOG_2PI - 0.5 * ops.log(var) - 0.5 * r * r / var
