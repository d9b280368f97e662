"""Reverse-mode automatic differentiation over a recorded tape.

Every differentiable operation produces a :class:`Tensor`.  While a tape is
active (see :func:`recording`) each operation whose inputs require gradients
appends ``(output, parents, vjp)`` to it.  Creation order is a valid
topological order, so the backward pass simply walks the tape in reverse.

Outside a tape nothing is recorded and operations cost little more than the
underlying numpy call, so the same model code serves training and inference.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy import special

_local = threading.local()


class Tape:
    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []


def _active_tape():
    return getattr(_local, "tape", None)


@contextmanager
def recording():
    """Record differentiable operations on a fresh tape (thread-local)."""
    prev = _active_tape()
    tape = Tape()
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


@contextmanager
def no_grad():
    prev = _active_tape()
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = prev


@contextmanager
def track_shapes():
    """Collect ``(op, shape)`` for every tensor produced inside the block.

    Used to assert that a computation never materialises an array of a
    forbidden shape (e.g. an n-by-n matrix in a sparse GP path).
    """
    prev = getattr(_local, "shapes", None)
    log = []
    _local.shapes = log
    try:
        yield log
    finally:
        _local.shapes = prev


class Tensor:
    """An ndarray plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "op", "name")
    __array_priority__ = 1000.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.op = "leaf" if requires_grad else "const"
        self.name = name

    # -- array protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op not in ("const",) else ""
        return f"Tensor({self.data!r}{tag})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def data_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _emit(data, parents, vjp, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out.name = None
    tape = getattr(_local, "tape", None)
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, parents, vjp))
    else:
        out.requires_grad = False
    shapes = getattr(_local, "shapes", None)
    if shapes is not None:
        shapes.append((op, data.shape))
    return out


def backward(tape, output):
    """Propagate d(output)/d(.) through ``tape``; returns ``{id(leaf): grad}``."""
    grads = {id(output): np.ones_like(output.data)}
    for node, parents, vjp in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        pgs = vjp(g)
        for p, pg in zip(parents, pgs):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    return grads


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _emit(ad * bd, (a, b), vjp, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit(out, (a, b), vjp, "div")


def neg(a):
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    """``a ** exponent`` for a constant scalar exponent."""
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    if p == 2.0:
        return _emit(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")
    return _emit(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1.0),), "pow")


def square(a):
    return power(a, 2)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def sin(a):
    a = as_tensor(a)
    ad = a.data
    return _emit(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a):
    a = as_tensor(a)
    ad = a.data
    return _emit(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.data)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    a = as_tensor(a)
    ad = a.data
    return _emit(np.logaddexp(0.0, ad), (a,),
                 lambda g: (g * special.expit(ad),), "softplus")


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_ndtr(a):
    """log of the standard-normal CDF, stable in both tails."""
    a = as_tensor(a)
    ad = a.data
    out = special.log_ndtr(ad)
    return _emit(out, (a,),
                 lambda g: (g * np.exp(-0.5 * ad * ad - _LOG_SQRT_2PI - out),),
                 "log_ndtr")


def ndtr(a):
    a = as_tensor(a)
    ad = a.data
    return _emit(special.ndtr(ad), (a,),
                 lambda g: (g * np.exp(-0.5 * ad * ad - _LOG_SQRT_2PI),), "ndtr")


def where(mask, a, b):
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    return _emit(np.where(mask, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(mask, g, 0.0), sa),
                            _unbroadcast(np.where(mask, 0.0, g), sb)), "where")


# -- reductions ---------------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand_reduced(g, shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[i] for i in axes]))
    return _emit(np.mean(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand_reduced(g, shape, axis, keepdims) / count,),
                 "mean")


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    out = special.logsumexp(ad, axis=axis, keepdims=True)
    soft = np.exp(ad - out)
    res = out if keepdims else np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _emit(res, (a,), vjp, "logsumexp")


def softmax(a, axis=-1):
    a = as_tensor(a)
    ad = a.data
    e = np.exp(ad - ad.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return _emit(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
                 "softmax")


def layer_norm(a, eps=1e-5):
    """Normalise the last axis to zero mean, unit variance (no affine part)."""
    a = as_tensor(a)
    ad = a.data
    mu = ad.mean(axis=-1, keepdims=True)
    xc = ad - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _emit(xhat, (a,), vjp, "layer_norm")


# -- shape manipulation ---------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return _emit(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def broadcast_to(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _emit(np.broadcast_to(a.data, shape), (a,),
                 lambda g: (_unbroadcast(g, old),), "broadcast_to")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis)))
               for i in items)


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _emit(a.data[idx], (a,), vjp, "getitem")


def concatenate(tensors, axis=0):
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(np.concatenate([t.data for t in ts], axis=axis), ts, vjp, "concatenate")


def stack(tensors, axis=0):
    ts = tuple(as_tensor(t) for t in tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _emit(np.stack([t.data for t in ts], axis=axis), ts, vjp, "stack")


def diagonal(a):
    """Main diagonal of a square matrix."""
    a = as_tensor(a)
    n = a.shape[0]
    return _emit(np.diagonal(a.data).copy(), (a,), lambda g: (np.diag(g),), "diagonal")


def diag(v):
    """Square matrix with ``v`` on its diagonal."""
    v = as_tensor(v)
    return _emit(np.diag(v.data), (v,), lambda g: (np.diagonal(g).copy(),), "diag")


def add_diagonal(a, value):
    """``a + value * I`` for a square matrix and a constant or Tensor scalar/vector."""
    a = as_tensor(a)
    v = as_tensor(value)
    n = a.shape[-1]
    out = a.data.copy()
    idx = np.arange(n)
    out[..., idx, idx] += v.data
    vshape = v.shape

    def vjp(g):
        gd = g[..., idx, idx]
        return g, _unbroadcast(gd, vshape)

    return _emit(out, (a, v), vjp, "add_diagonal")


# -- products ---------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 1 and bd.ndim == 1:
        return sum_(mul(a, b))
    if ad.ndim == 1:
        out = matmul(reshape(a, (1, ad.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if bd.ndim == 1:
        return reshape(matmul(a, reshape(b, (bd.shape[0], 1))), ad.shape[:-1])

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit(ad @ bd, (a, b), vjp, "matmul")


def sqdist(a, b):
    """Pairwise squared Euclidean distances between rows of ``a`` and ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    diff = ad[:, None, :] - bd[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = 2.0 * (g.sum(axis=1)[:, None] * ad - g @ bd)
        if b.requires_grad:
            gb = 2.0 * (g.sum(axis=0)[:, None] * bd - g.T @ ad)
        return ga, gb

    return _emit(out, (a, b), vjp, "sqdist")


def outer_diff(a, b):
    """``a[i] - b[j]`` for vectors ``a`` and ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data[:, None] - b.data[None, :], (a, b),
                 lambda g: (g.sum(axis=1), -g.sum(axis=0)), "outer_diff")
