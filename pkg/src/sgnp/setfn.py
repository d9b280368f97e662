"""Permutation-invariant set functions.

Every network here is a small frozen dataclass describing its shape.  It
registers its weights in a :class:`~sgnp.diffengine.ParamStore` under a
name prefix via ``init`` and is applied as ``net(params, prefix, ...)``
where ``params`` maps names to Tensors.  Positive quantities (lengthscales)
are stored as logs and exponentiated at use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffengine import Tensor, conv, data_of, ops
from .errors import ResourceError, ValidationError


def _linear_init(store, name, n_in, n_out, rng):
    # torch-style fan-in uniform initialisation
    bound = 1.0 / np.sqrt(n_in)
    store.add(name + ".w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(name + ".b", rng.uniform(-bound, bound, size=n_out))


def linear(p, name, x):
    return x @ p[name + ".w"] + p[name + ".b"]


def _pairs(X, y):
    X = data_of(X) if not isinstance(X, Tensor) else X
    if isinstance(X, Tensor):
        return ops.concatenate([X, ops.reshape(ops.as_tensor(y), (-1, 1))], axis=1)
    return np.concatenate([X, np.asarray(y, dtype=float).reshape(-1, 1)], axis=1)


@dataclass(frozen=True)
class MLP:
    """Fully connected ReLU network; no activation after the last layer."""

    sizes: tuple

    def init(self, store, prefix, rng):
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            _linear_init(store, f"{prefix}{i}", a, b, rng)

    def __call__(self, p, prefix, x):
        n = len(self.sizes) - 1
        for i in range(n):
            x = linear(p, f"{prefix}{i}", x)
            if i < n - 1:
                x = ops.relu(x)
        return x


@dataclass(frozen=True)
class DeepSet:
    """Mean of per-point MLP embeddings of the concatenated ``(x, y)`` pairs."""

    in_dim: int
    width: int = 128
    layers: int = 3
    out_dim: int = 128

    @property
    def mlp(self):
        return MLP((self.in_dim + 1,) + (self.width,) * (self.layers - 1) + (self.out_dim,))

    def init(self, store, prefix, rng):
        self.mlp.init(store, prefix + "phi.", rng)

    def __call__(self, p, prefix, X, y):
        X = _as_2d(X)
        if X.shape[1] != self.in_dim:
            raise ValidationError(f"DeepSet expects {self.in_dim}D inputs, got {X.shape[1]}D")
        if X.shape[0] == 0:
            return Tensor(np.zeros(self.out_dim))
        return ops.mean(self.mlp(p, prefix + "phi.", _pairs(X, y)), axis=0)


@dataclass(frozen=True)
class SetTransformer:
    """Post-norm self-attention encoder blocks, mean-pooled over tokens.

    Tokens are a linear embedding of the ``(x, y)`` pairs; there is no
    positional encoding or masking.  Each block is
    ``h = LN(h + MHA(h)); h = LN(h + FF(h))`` with ReLU feed-forward layers.
    """

    in_dim: int
    dim: int = 32
    heads: int = 8
    ff: int = 32
    blocks: int = 2

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValidationError("token dimension must be divisible by the head count")

    @property
    def out_dim(self):
        return self.dim

    def init(self, store, prefix, rng):
        _linear_init(store, prefix + "embed", self.in_dim + 1, self.dim, rng)
        for b in range(self.blocks):
            q = f"{prefix}block{b}."
            for name in ("q", "k", "v", "o"):
                _linear_init(store, q + name, self.dim, self.dim, rng)
            _linear_init(store, q + "ff0", self.dim, self.ff, rng)
            _linear_init(store, q + "ff1", self.ff, self.dim, rng)
            for ln in ("ln0", "ln1"):
                store.add(q + ln + ".g", np.ones(self.dim))
                store.add(q + ln + ".b", np.zeros(self.dim))

    def _attention(self, p, q, h):
        n = h.shape[0]
        dh = self.dim // self.heads

        def split(name):
            return ops.transpose(ops.reshape(linear(p, q + name, h), (n, self.heads, dh)), (1, 0, 2))

        Q, K, V = split("q"), split("k"), split("v")
        scores = (Q @ ops.transpose(K, (0, 2, 1))) / np.sqrt(dh)
        out = ops.softmax(scores, axis=-1) @ V
        out = ops.reshape(ops.transpose(out, (1, 0, 2)), (n, self.dim))
        return linear(p, q + "o", out)

    def __call__(self, p, prefix, X, y):
        X = _as_2d(X)
        if X.shape[1] != self.in_dim:
            raise ValidationError(f"transformer expects {self.in_dim}D inputs, got {X.shape[1]}D")
        if X.shape[0] == 0:
            return Tensor(np.zeros(self.dim))
        h = linear(p, prefix + "embed", _pairs(X, y))
        for b in range(self.blocks):
            q = f"{prefix}block{b}."
            h = _norm(p, q + "ln0", h + self._attention(p, q, h))
            ff = linear(p, q + "ff1", ops.relu(linear(p, q + "ff0", h)))
            h = _norm(p, q + "ln1", h + ff)
        return ops.mean(h, axis=0)


def _norm(p, name, h):
    return ops.layer_norm(h) * p[name + ".g"] + p[name + ".b"]


def _as_2d(X):
    if isinstance(X, Tensor):
        return X if X.ndim == 2 else ops.reshape(X, (-1, 1))
    X = np.asarray(X, dtype=float)
    return X if X.ndim == 2 else X.reshape(-1, 1)


@dataclass(frozen=True)
class InducingNet:
    """Maps a dataset to ``m`` inducing inputs: set function, then linear to ``m*d``.

    With ``translation_equivariant`` the context input mean is subtracted
    before the set function and added back to every output point.
    """

    body: object
    m: int
    d: int
    translation_equivariant: bool = True

    def init(self, store, prefix, rng):
        self.body.init(store, prefix + "body.", rng)
        _linear_init(store, prefix + "head", self.body.out_dim, self.m * self.d, rng)

    def _raw(self, p, prefix, X, y):
        r = self.body(p, prefix + "body.", X, y)
        return ops.reshape(linear(p, prefix + "head", r), (self.m, self.d))

    def __call__(self, p, prefix, X, y):
        if not self.translation_equivariant:
            return self._raw(p, prefix, X, y)
        return te_wrap(lambda Xc, yc: self._raw(p, prefix, Xc, yc))(X, y)


def te_wrap(inner):
    """Make a dataset-to-points map translation equivariant.

    The returned function centres the context inputs, calls ``inner`` and
    shifts the returned points back by the same mean.
    """
    def wrapped(X, y):
        X = np.asarray(data_of(X), dtype=float)
        X = X if X.ndim == 2 else X.reshape(-1, 1)
        mu = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        return inner(X - mu, y) + mu

    return wrapped


# -- ConvDeepSet ---------------------------------------------------------------------

@dataclass
class FunctionalEmbedding:
    """Channel values on a regular grid plus what is needed to query them.

    ``axes`` holds one coordinate vector per input dimension; ``values`` has
    shape ``grid shape + (channels,)``.
    """

    axes: list
    values: object
    log_lengthscale: object

    @property
    def spacing(self):
        return [float(a[1] - a[0]) if len(a) > 1 else 1.0 for a in self.axes]


@dataclass(frozen=True)
class ConvDeepSet:
    """SE set-convolution onto a grid, a same-padded CNN, SE interpolation out.

    The embedding has a density channel and a density-normalised data
    channel.  The CNN applies ``layers`` ReLU convolutions of width
    ``channels`` followed by a pointwise linear map to ``out_channels``.
    """

    dim: int
    spacing: float
    out_channels: int
    channels: int = 32
    layers: int = 3
    kernel_size: int = 5
    margin_frac: float = 0.1
    margin_cells: int = 2
    max_cells: int = 250_000

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError("ConvDeepSet grids support 1 or 2 input dimensions")
        if self.spacing <= 0:
            raise ValidationError("grid spacing must be positive")
        if self.kernel_size % 2 == 0:
            raise ValidationError("CNN kernel size must be odd")

    def init(self, store, prefix, rng):
        ls = np.full(self.dim, 2.0 * self.spacing)
        store.add(prefix + "log_psi", ls, positive=True)
        store.add(prefix + "log_interp", ls, positive=True)
        c_in = 2
        k = (self.kernel_size,) * self.dim
        for i in range(self.layers):
            bound = 1.0 / np.sqrt(c_in * self.kernel_size ** self.dim)
            store.add(f"{prefix}conv{i}.w", rng.uniform(-bound, bound, size=k + (c_in, self.channels)))
            store.add(f"{prefix}conv{i}.b", rng.uniform(-bound, bound, size=self.channels))
            c_in = self.channels
        _linear_init(store, prefix + "out", c_in, self.out_channels, rng)

    def grid(self, *point_sets):
        """Grid axes covering every given point set with margin.

        Nodes sit at integer multiples of the spacing, so translating all
        inputs by a whole number of cells translates the grid with them.
        """
        pts = [np.asarray(data_of(P), dtype=float).reshape(-1, self.dim) for P in point_sets]
        pts = np.concatenate([P for P in pts if P.size] or [np.zeros((1, self.dim))])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        margin = self.margin_frac * (hi - lo) + self.margin_cells * self.spacing
        axes = []
        for a, b in zip(lo - margin, hi + margin):
            i0, i1 = int(np.floor(a / self.spacing)), int(np.ceil(b / self.spacing))
            axes.append(self.spacing * np.arange(i0, i1 + 1))
        cells = int(np.prod([len(a) for a in axes]))
        if cells > self.max_cells:
            raise ResourceError(f"grid of {cells} cells exceeds the cap max_cells={self.max_cells}")
        return axes

    def embed(self, p, prefix, X, y, axes):
        """Density and normalised data channels on the grid (before the CNN)."""
        X = _as_2d(X)
        y = np.asarray(data_of(y), dtype=float).reshape(-1) if not isinstance(y, Tensor) else y
        ls = ops.exp(p[prefix + "log_psi"])
        shape = tuple(len(a) for a in axes)
        if X.shape[0] == 0:
            return Tensor(np.zeros(shape + (2,)))
        w = []
        for d, a in enumerate(axes):
            diff = ops.outer_diff(a, X[:, d]) / ls[d]
            w.append(ops.exp(-0.5 * diff * diff))  # (grid_d, n)
        if self.dim == 1:
            density = ops.sum_(w[0], axis=1)
            data = w[0] @ y
        else:
            density = w[0] @ w[1].T
            data = (w[0] * y) @ w[1].T
        mask = data_of(density) > 1e-6
        safe = ops.where(mask, density, 1.0)
        data = ops.where(mask, data / safe, 0.0)
        return ops.stack([density, data], axis=-1)

    def cnn(self, p, prefix, h):
        for i in range(self.layers):
            h = ops.relu(conv(h, p[f"{prefix}conv{i}.w"], p[f"{prefix}conv{i}.b"]))
        return linear(p, prefix + "out", h)

    def __call__(self, p, prefix, X, y, *query_sets):
        """Embed a context; the grid also covers every set in ``query_sets``."""
        axes = self.grid(X, *query_sets)
        h = self.cnn(p, prefix, self.embed(p, prefix, X, y, axes))
        return FunctionalEmbedding(axes, h, p[prefix + "log_interp"])


def query_functional(emb, locations):
    """Interpolate grid channels at arbitrary locations.

    Weights are SE kernel values normalised to sum to one (a softmax over
    grid nodes), with one trainable lengthscale per input dimension.
    Locations outside the grid are clamped to its edge.
    """
    dim = len(emb.axes)
    L = _as_2d(locations)
    if L.shape[1] != dim:
        raise ValidationError(f"query locations are {L.shape[1]}D, grid is {dim}D")
    ls = ops.exp(emb.log_lengthscale)
    weights = []
    for d, a in enumerate(emb.axes):
        col = L[:, d]
        lo, hi = float(a[0]), float(a[-1])
        cd = data_of(col)
        col = ops.where((cd >= lo) & (cd <= hi), col, np.clip(cd, lo, hi))
        diff = ops.outer_diff(col, a) / ls[d]
        weights.append(ops.softmax(-0.5 * diff * diff, axis=1))  # (q, grid_d)
    V = emb.values
    if dim == 1:
        return weights[0] @ V
    g1, g2, c = V.shape
    T = ops.reshape(weights[0] @ ops.reshape(V, (g1, g2 * c)), (-1, g2, c))
    return ops.sum_(T * ops.reshape(weights[1], weights[1].shape + (1,)), axis=1)


def kvv_covariance(r_k, r_v, lengthscale):
    """``S_kl = exp(-|r_k[k] - r_k[l]|^2 / (2 l^2)) r_v[k] r_v[l]``.

    An SE Gram matrix of the key embeddings modulated by the outer product of
    the value embeddings; symmetric PSD by construction.  Callers pass
    ``r_v`` through a positive map first if they need a positive diagonal.
    """
    r_k = ops.as_tensor(r_k)
    r_v = ops.reshape(ops.as_tensor(r_v), (-1,))
    z = r_k / lengthscale
    K = ops.exp(-0.5 * ops.sqdist(z, z))
    n = r_v.shape[0]
    return K * (ops.reshape(r_v, (n, 1)) * ops.reshape(r_v, (1, n)))
