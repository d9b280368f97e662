"""Portable checkpoint archive.

Layout (a standard ``.npz`` zip of ``.npy`` members, every array stored as
little-endian float64 in C order):

* ``param/<name>``       parameter value (log-space for positive entries)
* ``adam1/<name>``       Adam first moment (optional)
* ``adam2/<name>``       Adam second moment (optional)
* ``__meta__``           UTF-8 JSON, stored as a uint8 array

The JSON block holds ``format`` (version tag), ``params`` (name -> shape,
positive, trainable), ``adam_step`` and a free-form ``metadata`` dict
(model kind, kernel spec, counts, training position).
"""

import json

import numpy as np

from ..errors import ValidationError
from .optim import AdamState
from .params import ParamStore

FORMAT = "sgnp-checkpoint-1"


def save_checkpoint(path, store, metadata=None, adam=None):
    arrays = {}
    spec = {}
    for name, p in store.entries.items():
        arrays[f"param/{name}"] = np.asarray(p.value, dtype="<f8", order="C")
        spec[name] = {"shape": list(p.value.shape), "positive": p.positive,
                      "trainable": p.trainable}
    if adam is not None:
        for name, m in adam.first.items():
            arrays[f"adam1/{name}"] = np.asarray(m, dtype="<f8", order="C")
            arrays[f"adam2/{name}"] = np.asarray(adam.second[name], dtype="<f8", order="C")
    meta = {"format": FORMAT, "params": spec,
            "adam_step": None if adam is None else adam.step,
            "metadata": metadata or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(store, metadata, adam_state_or_None)``."""
    with np.load(path, allow_pickle=False) as npz:
        if "__meta__" not in npz.files:
            raise ValidationError(f"{path}: not a checkpoint (no metadata block)")
        meta = json.loads(bytes(npz["__meta__"]).decode())
        if meta.get("format") != FORMAT:
            raise ValidationError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        store = ParamStore()
        for name, info in meta["params"].items():
            value = np.asarray(npz[f"param/{name}"], dtype=np.float64).reshape(info["shape"])
            store.add(name, np.zeros(info["shape"]), trainable=info["trainable"])
            store.entries[name].value = value
            store.entries[name].positive = info["positive"]
        adam = None
        if meta.get("adam_step") is not None:
            adam = AdamState(step=int(meta["adam_step"]))
            for name in meta["params"]:
                key = f"adam1/{name}"
                if key in npz.files:
                    shape = meta["params"][name]["shape"]
                    adam.first[name] = np.asarray(npz[key], dtype=np.float64).reshape(shape)
                    adam.second[name] = np.asarray(npz[f"adam2/{name}"],
                                                   dtype=np.float64).reshape(shape)
    return store, meta["metadata"], adam
