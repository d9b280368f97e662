"""Finite-difference oracle shared by the gradient tests."""

import numpy as np

from sgnp.diffengine import Tensor, value_and_grad


def fd_gradient(loss_fn, store, h=1e-5):
    """Central differences of ``loss_fn`` over every trainable store entry.

    Evaluates the loss on plain constant tensors, so it never touches the
    tape or the backward pass it is checking.
    """
    def evaluate():
        consts = {n: Tensor(p.value) for n, p in store.entries.items()}
        out = loss_fn(consts)
        return float(out.data if isinstance(out, Tensor) else out)

    grads = {}
    for name, p in store.entries.items():
        g = np.zeros_like(p.value)
        if p.trainable:
            flat = p.value.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = evaluate()
                flat[i] = orig - h
                fm = evaluate()
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


def grad_rel_error(loss_fn, store, h=1e-5, steps=None):
    """Norm-wise relative error between tape gradients and central differences.

    With several ``steps`` the smallest error is returned: a ReLU kink closer
    than ``h`` to the evaluation point spoils only the larger steps, while a
    wrong gradient disagrees at every step size.
    """
    _, ad = value_and_grad(loss_fn, store)
    a = np.concatenate([ad[n].ravel() for n in store.names()])
    errors = []
    for step in steps or (h,):
        fd = fd_gradient(loss_fn, store, step)
        b = np.concatenate([fd[n].ravel() for n in store.names()])
        scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
        errors.append(float(np.linalg.norm(a - b) / scale))
    return min(errors)
