"""Differentiable convolution on regular grids (channel-last, same padding)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import _emit, as_tensor


def _im2col(xd, k):
    """Rows of flattened ``k``-wide (zero padded) neighbourhoods, one per grid cell."""
    nd = xd.ndim - 1
    p = k // 2
    grid = xd.shape[:nd]
    xp = np.pad(xd, [(p, p)] * nd + [(0, 0)])
    win = sliding_window_view(xp, (k,) * nd, axis=tuple(range(nd)))
    # win: grid + (c,) + (k,)*nd  ->  grid + (k,)*nd + (c,)
    perm = tuple(range(nd)) + tuple(range(nd + 1, 2 * nd + 1)) + (nd,)
    return np.transpose(win, perm).reshape(int(np.prod(grid)), -1)


def conv(x, w, b=None):
    """Same-padded convolution over a 1D or 2D grid.

    ``x`` has shape ``grid + (c_in,)``; ``w`` has shape
    ``(k,) * ndim + (c_in, c_out)`` with odd ``k``.  Implemented as an
    im2col matrix product so the weight gradient is a single matmul.
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    nd = xd.ndim - 1
    if nd not in (1, 2):
        raise ValueError(f"conv supports 1D or 2D grids, got {nd}D")
    c_out = wd.shape[-1]
    cols = _im2col(xd, wd.shape[0])
    w2 = wd.reshape(-1, c_out)
    out = (cols @ w2).reshape(xd.shape[:nd] + (c_out,))

    def vjp(g):
        gw = (cols.T @ g.reshape(-1, c_out)).reshape(wd.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            # the input gradient is a same-padded convolution of g with the
            # spatially flipped kernel and swapped channel roles
            flip = wd[(slice(None, None, -1),) * nd]
            wt = np.swapaxes(flip, -1, -2).reshape(-1, wd.shape[-2])
            gx = (_im2col(g, wd.shape[0]) @ wt).reshape(xd.shape)
        return gx, gw

    res = _emit(out, (x, w), vjp, "conv")
    if b is not None:
        res = res + b
    return res
