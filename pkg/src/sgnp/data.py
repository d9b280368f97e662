"""Tasks, synthetic meta-datasets, context/target splits and CSV ingestion."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np
from scipy.special import expit

from .errors import ParseError, SchemaError, ValidationError
from .kernels import chol_with_jitter, gram, se


@dataclass
class Task:
    """One dataset.  ``context``/``target`` are optional index arrays into the rows."""

    X: np.ndarray
    y: np.ndarray
    context: np.ndarray = None
    target: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValidationError(f"task {self.name!r}: {self.X.shape[0]} inputs but {self.y.shape[0]} outputs")
        n = self.n
        for label in ("context", "target"):
            idx = getattr(self, label)
            if idx is None:
                continue
            idx = np.asarray(idx, dtype=np.int64).reshape(-1)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValidationError(f"task {self.name!r}: {label} index out of range")
            if np.unique(idx).size != idx.size:
                raise ValidationError(f"task {self.name!r}: duplicate {label} indices")
            setattr(self, label, idx)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def is_binary(self):
        return bool(np.all((self.y == 0) | (self.y == 1)))

    def _rows(self, idx):
        if idx is None:
            return self.X, self.y
        return self.X[idx], self.y[idx]

    @property
    def Xc(self):
        return self._rows(self.context)[0]

    @property
    def yc(self):
        return self._rows(self.context)[1]

    @property
    def Xt(self):
        return self._rows(self.target)[0]

    @property
    def yt(self):
        return self._rows(self.target)[1]

    def fingerprint(self):
        """Hashable snapshot of the arrays, for checking nothing mutated them."""
        parts = [self.X.tobytes(), self.y.tobytes()]
        for idx in (self.context, self.target):
            parts.append(b"" if idx is None else idx.tobytes())
        return hash(b"|".join(parts))


@dataclass
class MetaDataset:
    tasks: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tasks:
            raise ValidationError("a meta-dataset needs at least one task")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    @property
    def dim(self):
        return self.tasks[0].dim


# -- generation -----------------------------------------------------------------------

def sample_gp_prior(X, spec, rng, num_samples=None):
    """A draw of ``f(X)`` from the zero-mean GP prior with kernel ``spec``.

    With ``num_samples`` returns that many independent draws as rows.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise ValidationError("cannot sample a GP prior at zero points")
    L = chol_with_jitter(gram(spec, X).data, "prior Gram").data
    if num_samples is None:
        return L @ rng.standard_normal(X.shape[0])
    return rng.standard_normal((num_samples, X.shape[0])) @ L.T


REGRESSION_KERNEL = se(0.5, 1.0)
REGRESSION_NOISE = 0.05
CLASSIFICATION_KERNEL = se(0.25, float(np.sqrt(2.5)), dim=2)


def gen_1d_regression(count, seed, test=False):
    """GP regression tasks: SE prior (lengthscale 0.5, unit scale) plus noise 0.05.

    ``n ~ U{10..100}`` for training tasks and ``U{5..30}`` for test tasks;
    inputs uniform on ``[-3, 3]``.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = (5, 30) if test else (10, 100)
    tasks = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        X = rng.uniform(-3.0, 3.0, size=(n, 1))
        f = sample_gp_prior(X, REGRESSION_KERNEL, rng)
        tasks.append(Task(X, f + REGRESSION_NOISE * rng.standard_normal(n), name=f"task{i}"))
    return MetaDataset(tasks, {"generator": "1d_regression", "seed": int(seed), "test": bool(test)})


def gen_2d_classification(count, seed, test=False):
    """Binary tasks whose logits are an SE GP draw (variance 2.5, lengthscale 0.25).

    ``n ~ U{30..150}`` for training and ``U{60..300}`` for test tasks;
    inputs uniform on ``[-1, 1]^2``; labels drawn through the logistic link.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = (60, 300) if test else (30, 150)
    tasks = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        X = rng.uniform(-1.0, 1.0, size=(n, 2))
        f = sample_gp_prior(X, CLASSIFICATION_KERNEL, rng)
        y = (rng.uniform(size=n) < expit(f)).astype(float)
        tasks.append(Task(X, y, name=f"task{i}"))
    return MetaDataset(tasks, {"generator": "2d_classification", "seed": int(seed), "test": bool(test)})


# -- splitting ----------------------------------------------------------------------------

def split_context_target(task, p_range, rng, mode="disjoint"):
    """Random context subset of proportion ``p ~ U[p_range]``.

    ``disjoint``: the remaining points are the targets.  ``full-target``:
    every point is a target.  The context size is clamped so that both
    sets are non-empty.
    """
    low, high = p_range
    if not 0 < low <= high < 1:
        raise ValidationError(f"context proportion range must satisfy 0 < low <= high < 1, got {p_range}")
    if mode not in ("disjoint", "full-target"):
        raise ValidationError(f"unknown split mode {mode!r}")
    n = task.n
    if n < 2 and mode == "disjoint":
        raise ValidationError(f"task {task.name!r} is too small to split")
    if n < 1:
        raise ValidationError(f"task {task.name!r} is empty")
    # clamp rather than resample: tiny tasks may have no valid rounding of p * n
    upper = n if mode == "full-target" else n - 1
    nc = min(max(int(round(rng.uniform(low, high) * n)), 1), upper)
    perm = rng.permutation(n)
    context = np.sort(perm[:nc])
    target = np.arange(n) if mode == "full-target" else np.sort(perm[nc:])
    return replace(task, context=context, target=target)


def pool_tasks(meta):
    """Concatenate every task's rows into one task."""
    dims = {t.dim for t in meta}
    if len(dims) != 1:
        raise ValidationError(f"cannot pool tasks of differing input dimension {sorted(dims)}")
    if len(meta) == 1:
        t = meta[0]
        return Task(t.X.copy(), t.y.copy(), name=t.name)
    return Task(np.concatenate([t.X for t in meta]), np.concatenate([t.y for t in meta]), name="pooled")


def pooling_demo(meta, kernel=REGRESSION_KERNEL, noise=REGRESSION_NOISE):
    """Per-point exact-GP log marginal likelihood: pooled tasks vs each task alone."""
    from .gp_core import log_marginal

    per_task = [float(log_marginal(t.X, t.y, kernel, noise).data) / t.n for t in meta]
    pooled = pool_tasks(meta)
    pooled_lml = float(log_marginal(pooled.X, pooled.y, kernel, noise).data) / pooled.n
    return {"pooled_per_point": pooled_lml, "per_task_mean_per_point": float(np.mean(per_task)),
            "tasks": len(meta), "pooled_points": pooled.n}


# -- CSV ingestion ------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    """Z-score statistics.  Target statistics come only from ``target_groups``."""

    feature_mean: tuple
    feature_std: tuple
    target_mean: float
    target_std: float
    target_groups: tuple

    def normalize_X(self, X):
        return (np.asarray(X, dtype=float) - np.array(self.feature_mean)) / np.array(self.feature_std)

    def normalize_y(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_std

    def denormalize_y(self, y):
        return np.asarray(y, dtype=float) * self.target_std + self.target_mean

    def denormalize_var(self, v):
        return np.asarray(v, dtype=float) * self.target_std ** 2

    def to_dict(self):
        return {"feature_mean": list(self.feature_mean), "feature_std": list(self.feature_std),
                "target_mean": self.target_mean, "target_std": self.target_std,
                "target_groups": list(self.target_groups)}


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError(f"{path}: empty file")
    first = text.splitlines()[0]
    delimiter = "\t" if "\t" in first and "," not in first else ","
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    return header, list(reader)


def parse_cell(cell, datetime_format=None):
    """A numeric cell, or a timestamp in days since the Unix epoch.

    Timestamps are only recognised when ``datetime_format`` (a ``strptime``
    pattern) is given; they are read as UTC.
    """
    try:
        return float(cell)
    except ValueError:
        if datetime_format is None:
            raise
    stamp = datetime.strptime(cell.strip(), datetime_format).replace(tzinfo=timezone.utc)
    return stamp.timestamp() / 86400.0


def load_csv_tasks(path, features, target, group=None, train_groups=None, datetime_format=None):
    """One z-scored task per group.

    Long layout: ``target`` names one column and ``group`` names the column
    whose distinct values define the tasks.  Wide layout: ``target`` is a
    list of columns, each becoming a task over the shared features, and
    ``group`` is omitted.  Features are normalised over all rows.  Targets
    are normalised with the mean and standard deviation pooled over
    ``train_groups`` only (default: every group), and those statistics are
    applied to every task.
    """
    wide = not isinstance(target, str)
    targets = list(target) if wide else [target]
    if wide and group is not None:
        raise ValidationError("give either a list of target columns or a group column, not both")
    if not wide and group is None:
        raise ValidationError("a single target column needs a group column")
    header, rows = _read_rows(path)
    needed = list(features) + targets + ([] if wide else [group])
    for col in needed:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    idx = {c: header.index(c) for c in needed}
    Xs, ys, gs = [], [], []
    for r, row in enumerate(rows, start=2):
        if not any(cell.strip() for cell in row):
            continue
        try:
            Xs.append([parse_cell(row[idx[c]], datetime_format) for c in features])
            ys.append([float(row[idx[c]]) for c in targets])
        except (ValueError, IndexError):
            raise ParseError(f"{path}: non-numeric or missing value", row=r) from None
        if not np.all(np.isfinite(Xs[-1])) or not np.all(np.isfinite(ys[-1])):
            raise ParseError(f"{path}: non-finite value", row=r)
        if not wide:
            gs.append(row[idx[group]].strip())
    if not Xs:
        raise ParseError(f"{path}: no data rows")
    X, Y = np.array(Xs), np.array(ys)
    if wide:
        # stack the target columns so that every (row, column) is one observation
        n = X.shape[0]
        X = np.tile(X, (len(targets), 1))
        y = Y.T.reshape(-1)
        g = np.repeat(np.array(targets), n)
        groups = targets
    else:
        y, g = Y[:, 0], np.array(gs)
        groups = list(dict.fromkeys(gs))
    train_groups = tuple(groups if train_groups is None else (str(t) for t in train_groups))
    missing = set(train_groups) - set(groups)
    if missing:
        raise ValidationError(f"training groups not present in {path}: {sorted(missing)}")
    fstd = X.std(axis=0)
    for c, s in zip(features, fstd):
        if s == 0:
            raise ValidationError(f"feature column {c!r} has zero variance")
    train = np.isin(g, train_groups)
    tstd = y[train].std()
    if tstd == 0:
        raise ValidationError(f"target {target!r} has zero variance over the training groups")
    stats = NormalizationStats(tuple(X.mean(axis=0)), tuple(fstd), float(y[train].mean()),
                               float(tstd), train_groups)
    Xn, yn = stats.normalize_X(X), stats.normalize_y(y)
    tasks = [Task(Xn[g == name], yn[g == name], name=name) for name in groups]
    meta = MetaDataset(tasks, {"generator": "csv", "source": os.path.basename(str(path)),
                               "features": list(features), "target": target, "group": group,
                               "normalization": stats.to_dict()})
    return meta, stats


# -- meta-dataset directories -------------------------------------------------------------

MANIFEST = "manifest.json"


def save_meta_dataset(meta, directory):
    """One CSV per task (columns ``x0..x{d-1}, y``) plus ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, t in enumerate(meta):
        fname = f"task_{i:05d}.csv"
        with open(os.path.join(directory, fname), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{d}" for d in range(t.dim)] + ["y"])
            for xrow, yv in zip(t.X, t.y):
                w.writerow([repr(float(v)) for v in xrow] + [repr(float(yv))])
        entry = {"file": fname, "name": t.name, "n": t.n}
        if t.context is not None:
            entry["context"] = t.context.tolist()
        if t.target is not None:
            entry["target"] = t.target.tolist()
        entries.append(entry)
    manifest = {"provenance": meta.provenance, "input_dim": meta.dim, "tasks": entries}
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_meta_dataset(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"{directory}: no {MANIFEST}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    tasks = []
    for entry in manifest["tasks"]:
        header, rows = _read_rows(os.path.join(directory, entry["file"]))
        if not header or header[-1] != "y":
            raise SchemaError(f"{entry['file']}: last column must be 'y'")
        try:
            arr = np.array([[float(c) for c in row] for row in rows if row], dtype=float)
        except ValueError:
            raise ParseError(f"{entry['file']}: non-numeric value") from None
        arr = arr.reshape(-1, len(header))
        tasks.append(Task(arr[:, :-1], arr[:, -1], entry.get("context"), entry.get("target"),
                          entry.get("name", "")))
    return MetaDataset(tasks, manifest.get("provenance", {}))
