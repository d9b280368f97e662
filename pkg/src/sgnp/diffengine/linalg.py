"""Differentiable dense linear algebra: Cholesky and triangular solves."""

import numpy as np
from scipy import linalg as sla

from ..errors import NumericalError
from .tensor import _emit, as_tensor


def cholesky(a, name="matrix", factor=None):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    The backward pass uses the symmetric form of the standard reverse-mode
    rule: ``A_bar = sym(L^-T Phi(L^T L_bar) L^-1)`` where ``Phi`` keeps the
    lower triangle and halves the diagonal.  ``factor`` may pass in an
    already-computed factor of ``a.data`` to skip refactorizing.
    """
    a = as_tensor(a)
    if factor is not None:
        L = factor
    else:
        try:
            L = np.linalg.cholesky(a.data)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky factorization failed: {exc}",
                                 op=f"cholesky[{name}]") from None

    def vjp(g):
        phi = np.tril(L.T @ g)
        phi[np.diag_indices_from(phi)] *= 0.5
        x = sla.solve_triangular(L, phi, lower=True, trans="T")
        abar = sla.solve_triangular(L, x.T, lower=True, trans="T").T
        return (0.5 * (abar + abar.T),)

    return _emit(L, (a,), vjp, "cholesky")


def solve_triangular(L, b, trans=False):
    """``L^-1 b`` (or ``L^-T b`` when ``trans``) for lower-triangular ``L``."""
    L, b = as_tensor(L), as_tensor(b)
    Ld = L.data
    bd = b.data
    vec = bd.ndim == 1
    b2 = bd[:, None] if vec else bd
    tflag = "T" if trans else "N"
    x = sla.solve_triangular(Ld, b2, lower=True, trans=tflag, check_finite=False)

    def vjp(g):
        g2 = g[:, None] if vec else g
        gb = sla.solve_triangular(Ld, g2, lower=True, trans="N" if trans else "T",
                                  check_finite=False)
        gL = None
        if L.requires_grad:
            gL = -np.tril(x @ gb.T) if trans else -np.tril(gb @ x.T)
        return gL, (gb[:, 0] if vec else gb)

    return _emit(x[:, 0] if vec else x, (L, b), vjp, "solve_triangular")


def cho_solve(L, b):
    """``(L L^T)^-1 b``."""
    return solve_triangular(L, solve_triangular(L, b), trans=True)


def logdet_from_chol(L):
    """``log det(L L^T)`` from a Cholesky factor."""
    from .tensor import diagonal, log, sum_

    return 2.0 * sum_(log(diagonal(L)))
