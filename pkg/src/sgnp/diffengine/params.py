"""Named parameter storage and the loss-gradient entry point."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError
from .tensor import Tensor, backward, recording


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    positive: bool = False  # value holds log of a strictly positive quantity
    trainable: bool = True


@dataclass
class ParamStore:
    """Ordered mapping ``name -> Param``.

    Positivity-constrained quantities (lengthscales, output scales, noise)
    are registered with ``positive=True`` and stored as their logarithm, so
    no optimizer step can make them non-positive.
    """

    entries: dict = field(default_factory=dict)

    def add(self, name, value, positive=False, trainable=True):
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        if positive:
            if np.any(value <= 0):
                raise ValueError(f"{name}: positive parameter needs values > 0")
            value = np.array(np.log(value))
        self.entries[name] = Param(value, np.zeros_like(value), positive, trainable)
        return name

    def update(self, values):
        for name, value in values.items():
            self.add(name, value)

    def __contains__(self, name):
        return name in self.entries

    def __getitem__(self, name):
        return self.entries[name].value

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self):
        return list(self.entries)

    def constrained(self, name):
        """The parameter in natural units (exponentiated if log-stored)."""
        p = self.entries[name]
        return np.exp(p.value) if p.positive else p.value.copy()

    def set_value(self, name, value):
        p = self.entries[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != p.value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {p.value.shape}")
        p.value = value.copy()

    def set_trainable(self, prefix, trainable):
        for name, p in self.entries.items():
            if name.startswith(prefix):
                p.trainable = trainable

    def zero_grad(self):
        for p in self.entries.values():
            p.grad = np.zeros_like(p.value)

    def values(self):
        return {name: p.value for name, p in self.entries.items()}

    def grads(self):
        return {name: p.grad for name, p in self.entries.items()}

    def num_values(self):
        return int(sum(p.value.size for p in self.entries.values()))

    def copy(self):
        return ParamStore({n: Param(p.value.copy(), p.grad.copy(), p.positive, p.trainable)
                           for n, p in self.entries.items()})

    def as_constants(self):
        """``name -> Tensor`` with no gradient tracking, for inference."""
        return {name: Tensor(p.value) for name, p in self.entries.items()}


def value_and_grad(loss_fn, store, *args, **kwargs):
    """Evaluate ``loss_fn(params, *args, **kwargs)`` and its exact gradient.

    ``params`` maps every store name to a leaf Tensor.  Gradients are written
    into the store's grad slots (zeros for unused or frozen entries) and also
    returned as a dict.  A non-finite loss raises :class:`NumericalError`
    naming the first operation on the tape that went non-finite.
    """
    leaves = {}
    for name, p in store.entries.items():
        t = Tensor(p.value, requires_grad=p.trainable, name=name)
        leaves[name] = t
    with recording() as tape:
        loss = loss_fn(leaves, *args, **kwargs)
    if not isinstance(loss, Tensor):
        loss = Tensor(loss)
    value = float(loss.data)
    if not np.isfinite(value):
        culprit = next((node.op for node, _, _ in tape.nodes
                        if not np.all(np.isfinite(node.data))), "loss")
        raise NumericalError(f"non-finite loss {value}", op=culprit)
    grads = backward(tape, loss) if loss.requires_grad else {}
    out = {}
    for name, t in leaves.items():
        g = grads.get(id(t))
        p = store.entries[name]
        p.grad = np.zeros_like(p.value) if g is None else np.array(g, dtype=np.float64).reshape(p.value.shape)
        out[name] = p.grad
    return value, out
