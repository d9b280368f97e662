"""Experiment runner: ``sgnp gen|train|eval|predict|plot|pool``.

Every experiment is one YAML file::

    seed: 0
    out: runs/regression
    data:  {source: 1d_regression, count: 5}
    model: {kind: SGNP, kernel: {type: se_ard, lengthscales: [1.0], scale: 1.0}}
    train: {steps: 5000, checkpoint_every: 500}
    eval:  {count: 100, p_range: [0.45, 0.55]}

Unknown keys anywhere are errors.  Exit codes: 0 success, 2 invalid
input, 3 numerical or training failure, 4 file-system failure, 5 resource
cap exceeded.  ``SGNP_THREADS`` sets the number of evaluation workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import data as data_mod
from .diffengine import AdamState, load_checkpoint, save_checkpoint
from .errors import (NumericalError, ParseError, ResourceError, SchemaError, TrainingError,
                     ValidationError)
from .models import MetaTrainConfig, Model, ModelSpec, meta_train, task_metrics

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO, EXIT_RESOURCE = 0, 2, 3, 4, 5
THREADS_ENV = "SGNP_THREADS"
GENERATORS = {"1d_regression": data_mod.gen_1d_regression,
              "2d_classification": data_mod.gen_2d_classification}

CHECKPOINT = "checkpoint.npz"
TRACE = "trace.tsv"
METRICS = "metrics.json"
RESOLVED = "config.resolved.yaml"
DIAGNOSTICS = "diagnostics.json"


# -- config -------------------------------------------------------------------------------

def _check_keys(section, d, allowed):
    if not isinstance(d, dict):
        raise ValidationError(f"config section {section!r} must be a mapping")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown keys in {section}: {sorted(unknown)}")


DATA_KEYS = {
    "generator": {"source", "count", "seed"},
    "csv": {"source", "path", "features", "target", "group", "train_groups", "datetime_format"},
    "directory": {"source", "path"},
}
EVAL_KEYS = {"count", "seed", "p_range", "groups", "split"}
SPLIT_KEYS = {"mode", "p", "feature", "value"}
TOP_KEYS = {"seed", "out", "data", "model", "train", "eval"}


@dataclass
class ExperimentConfig:
    seed: int
    out: str
    data: dict
    model: ModelSpec
    train: MetaTrainConfig
    checkpoint_every: int
    eval: dict
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    def resolved(self):
        """Plain-data snapshot with every default filled in."""
        train = asdict(self.train)
        train["p_range"] = list(train["p_range"])
        train["checkpoint_every"] = self.checkpoint_every
        ev = dict(self.eval)
        ev["p_range"] = list(ev["p_range"])
        return {"seed": self.seed, "out": self.out, "data": self.data,
                "model": self.model.to_dict(), "train": train, "eval": ev}


def parse_config(raw, base_dir=".", seed=None, out=None, steps=None):
    """Validate a config mapping; ``seed``/``out``/``steps`` override the file."""
    _check_keys("config", raw, TOP_KEYS)
    for key in ("data", "model"):
        if key not in raw:
            raise ValidationError(f"config needs a {key!r} section")
    top_seed = int(raw.get("seed", 0) if seed is None else seed)
    overriding = seed is not None

    d = dict(raw["data"])
    source = d.get("source")
    family = "generator" if source in GENERATORS else source
    if family not in DATA_KEYS:
        raise ValidationError(f"unknown data source {source!r}; expected one of "
                              f"{sorted(GENERATORS) + ['csv', 'directory']}")
    _check_keys("data", d, DATA_KEYS[family])
    if family == "generator":
        d["count"] = int(d.get("count", 0))
        if d["count"] < 1:
            raise ValidationError("data.count must be at least 1")
        d["seed"] = top_seed if overriding or "seed" not in d else int(d["seed"])
    else:
        if "path" not in d:
            raise ValidationError(f"data source {source!r} needs a path")
    if family == "csv":
        for key in ("features", "target"):
            if key not in d:
                raise ValidationError(f"csv data needs {key!r}")

    model = ModelSpec.from_dict(raw["model"])

    t = dict(raw.get("train", {}))
    checkpoint_every = int(t.pop("checkpoint_every", 1000))
    if checkpoint_every < 1:
        raise ValidationError("train.checkpoint_every must be at least 1")
    t["seed"] = top_seed if overriding or "seed" not in t else int(t["seed"])
    if steps is not None:
        t["steps"] = int(steps)
    train = MetaTrainConfig.from_dict(t)

    ev = dict(raw.get("eval", {}))
    _check_keys("eval", ev, EVAL_KEYS)
    ev["seed"] = top_seed + 1 if overriding or "seed" not in ev else int(ev["seed"])
    ev["p_range"] = [float(v) for v in ev.get("p_range", (0.45, 0.55))]
    lo, hi = ev["p_range"]
    if not 0 < lo <= hi < 1:
        raise ValidationError(f"eval.p_range must satisfy 0 < low <= high < 1, got {ev['p_range']}")
    if family == "csv":
        if "groups" not in ev:
            raise ValidationError("csv experiments need eval.groups (the held-out task names)")
        split = dict(ev.get("split", {"mode": "random", "p": 0.5}))
        _check_keys("eval.split", split, SPLIT_KEYS)
        if split.get("mode") == "random":
            p = float(split.get("p", 0.5))
            if not 0 < p < 1:
                raise ValidationError("eval.split.p must lie in (0, 1)")
            split["p"] = p
        elif split.get("mode") == "threshold":
            if "feature" not in split or "value" not in split:
                raise ValidationError("threshold splits need a feature and a value")
        else:
            raise ValidationError(f"unknown eval.split.mode {split.get('mode')!r}")
        ev["split"] = split
    else:
        ev["count"] = int(ev.get("count", 100))
        if ev["count"] < 1:
            raise ValidationError("eval.count must be at least 1")
        if "groups" in ev or "split" in ev:
            raise ValidationError("eval.groups and eval.split only apply to csv data")

    out_dir = out if out is not None else raw.get("out")
    if out_dir is None:
        raise ValidationError("no output directory: set 'out' in the config or pass --out")
    return ExperimentConfig(top_seed, str(out_dir), d, model, train, checkpoint_every, ev,
                            base_dir, raw)


def load_config(path, seed=None, out=None, steps=None):
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: {exc}") from None
    if raw is None:
        raise ValidationError(f"{path}: empty config")
    return parse_config(raw, os.path.dirname(os.path.abspath(path)), seed, out, steps)


# -- data ---------------------------------------------------------------------------------

def _path(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg.base_dir, p)


def _load_csv(cfg):
    d = cfg.data
    return data_mod.load_csv_tasks(_path(cfg, d["path"]), d["features"], d["target"],
                                   d.get("group"), d.get("train_groups"),
                                   d.get("datetime_format"))


def training_tasks(cfg):
    """The meta-training dataset, plus normalisation stats for csv sources."""
    d = cfg.data
    if d["source"] in GENERATORS:
        saved = os.path.join(cfg.out, "data", "train")
        if os.path.exists(os.path.join(saved, data_mod.MANIFEST)):
            return data_mod.load_meta_dataset(saved), None
        return GENERATORS[d["source"]](d["count"], d["seed"]), None
    if d["source"] == "directory":
        return data_mod.load_meta_dataset(_path(cfg, d["path"])), None
    meta, stats = _load_csv(cfg)
    tasks = [t for t in meta if t.name in stats.target_groups]
    return data_mod.MetaDataset(tasks, meta.provenance), stats


def heldout_tasks(cfg):
    """Evaluation tasks with their context/target splits, plus csv stats."""
    d, ev = cfg.data, cfg.eval
    if d["source"] == "csv":
        meta, stats = _load_csv(cfg)
        by_name = {t.name: t for t in meta}
        tasks = []
        for i, name in enumerate(ev["groups"]):
            name = str(name)
            if name not in by_name:
                raise ValidationError(f"eval group {name!r} not in the data")
            tasks.append(_split_csv_task(by_name[name], ev["split"], stats, cfg.data,
                                         np.random.default_rng([ev["seed"], i])))
        return tasks, stats
    saved = os.path.join(cfg.out, "data", "test")
    if os.path.exists(os.path.join(saved, data_mod.MANIFEST)):
        return list(data_mod.load_meta_dataset(saved)), None
    if d["source"] == "directory":
        raise ValidationError("directory sources need pre-split test tasks in <out>/data/test")
    return generate_heldout(cfg), None


def generate_heldout(cfg):
    ev = cfg.eval
    raw = GENERATORS[cfg.data["source"]](ev["count"], ev["seed"], test=True)
    return [data_mod.split_context_target(t, tuple(ev["p_range"]), np.random.default_rng([ev["seed"], i]))
            for i, t in enumerate(raw)]


def _split_csv_task(task, split, stats, d, rng):
    if split["mode"] == "random":
        return data_mod.split_context_target(task, (split["p"], split["p"]), rng)
    feature = split["feature"]
    if feature not in d["features"]:
        raise ValidationError(f"split feature {feature!r} is not one of the model features")
    j = list(d["features"]).index(feature)
    raw = data_mod.parse_cell(str(split["value"]), d.get("datetime_format"))
    cut = (raw - stats.feature_mean[j]) / stats.feature_std[j]
    before = task.X[:, j] < cut
    if before.all() or not before.any():
        raise ValidationError(f"threshold {split['value']!r} leaves an empty context or target")
    return replace(task, context=np.flatnonzero(before), target=np.flatnonzero(~before))


# -- checkpoints --------------------------------------------------------------------------

def save_model(path, model, step=None, adam=None, trace=None, cfg=None, stats=None):
    meta = {"model_spec": model.spec.to_dict(), "step": step,
            "trace": [list(r) for r in (trace or [])]}
    if cfg is not None:
        meta["train_config"] = cfg.resolved()["train"]
    if stats is not None:
        meta["normalization"] = stats.to_dict()
    tmp = path + ".tmp"
    save_checkpoint(tmp, model.store, meta, adam)
    os.replace(tmp, path)


def load_model(path):
    """``(model, metadata, adam)`` from a checkpoint file."""
    store, meta, adam = load_checkpoint(path)
    if "model_spec" not in meta:
        raise ValidationError(f"{path}: checkpoint has no model spec")
    spec = ModelSpec.from_dict(meta["model_spec"])
    return Model(spec, store=store), meta, adam


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step\tlr\tloss\n")
        for step, lr, loss in trace:
            fh.write(f"{int(step)}\t{float(lr)!r}\t{float(loss)!r}\n")


def read_trace(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0] != ["step", "lr", "loss"]:
        raise SchemaError(f"{path}: not a loss trace (expected header step, lr, loss)")
    try:
        return [(int(r[0]), float(r[1]), float(r[2])) for r in rows[1:] if r]
    except (ValueError, IndexError):
        raise ParseError(f"{path}: malformed trace row") from None


# -- commands -----------------------------------------------------------------------------

def cmd_gen(cfg):
    d = cfg.data
    if d["source"] not in GENERATORS:
        raise ValidationError("gen needs a synthetic generator data source")
    train = GENERATORS[d["source"]](d["count"], d["seed"])
    test = data_mod.MetaDataset(generate_heldout(cfg), {"generator": d["source"], "seed": cfg.eval["seed"],
                                        "test": True, "p_range": cfg.eval["p_range"]})
    root = os.path.join(cfg.out, "data")
    data_mod.save_meta_dataset(train, os.path.join(root, "train"))
    data_mod.save_meta_dataset(test, os.path.join(root, "test"))
    _write_resolved(cfg)
    sizes = np.array([t.n for t in train])
    print(f"wrote {len(train)} training tasks (n min {sizes.min()}, mean {sizes.mean():.1f}, "
          f"max {sizes.max()}) and {len(test)} test tasks to {root}")
    return {"train": len(train), "test": len(test)}


def _write_resolved(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, RESOLVED), "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.resolved(), fh, sort_keys=False)


class _Stop(Exception):
    pass


def cmd_train(cfg, resume=False, until=None):
    if cfg.model.kind == "GP":
        raise ValidationError("the GP oracle has nothing to train; run eval directly")
    meta, stats = training_tasks(cfg)
    if meta.dim != cfg.model.input_dim:
        raise ValidationError(f"data is {meta.dim}D but the model expects {cfg.model.input_dim}D")
    os.makedirs(cfg.out, exist_ok=True)
    _write_resolved(cfg)
    ckpt = os.path.join(cfg.out, CHECKPOINT)
    start, trace, adam = 0, [], None
    if resume and os.path.exists(ckpt):
        model, meta_block, adam = load_model(ckpt)
        if model.spec != cfg.model:
            raise ValidationError("checkpoint model spec differs from the config")
        start = int(meta_block.get("step") or 0)
        trace = [tuple(r) for r in meta_block.get("trace", [])]
        adam = adam or AdamState()
    else:
        model = Model(cfg.model, seed=cfg.train.seed)
    if start >= cfg.train.steps:
        print(f"checkpoint already at step {start}; nothing to do")
        return model

    def on_step(step, model, adam, trace):
        last = step == cfg.train.steps
        stopping = until is not None and step >= until
        if (step % cfg.checkpoint_every == 0 and not last) or stopping:
            save_model(ckpt, model, step, adam, trace, cfg, stats)
            write_trace(os.path.join(cfg.out, TRACE), trace)
        if stopping and not last:
            raise _Stop

    t0 = time.perf_counter()
    try:
        result = meta_train(model, meta, cfg.train, adam=adam, start_step=start, trace=trace,
                            callback=on_step)
    except _Stop:
        print(f"stopped at step {until}; resume with --resume")
        return model
    except TrainingError as exc:
        with open(os.path.join(cfg.out, DIAGNOSTICS), "w", encoding="utf-8") as fh:
            json.dump({"message": str(exc), **exc.diagnostics}, fh, indent=1)
        raise
    save_model(ckpt, model, result.step, result.adam, result.trace, cfg, stats)
    write_trace(os.path.join(cfg.out, TRACE), result.trace)
    final = result.trace[-1][2]
    print(f"trained {cfg.model.kind} for {cfg.train.steps - start} steps in "
          f"{time.perf_counter() - t0:.1f}s; final loss {final:.4f}; checkpoint {ckpt}")
    return model


def _threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be at least 1")
    return n


def evaluate_tasks(model, tasks, seed, stats=None):
    """Per-task rows and the aggregate block, reduced in task order."""
    def one(i):
        return task_metrics(model, tasks[i], np.random.default_rng([int(seed), i]))

    with ThreadPoolExecutor(_threads()) as pool:
        results = list(pool.map(one, range(len(tasks))))
    scale = 1.0 if stats is None else stats.target_std
    rows = []
    for i, (t, (ll, mae, secs)) in enumerate(zip(tasks, results)):
        row = {"task": t.name or str(i), "n_context": len(t.context), "n_target": len(t.target),
               "ll": ll, "mae": mae * scale if model.spec.likelihood == "gaussian" else mae,
               "seconds": secs}
        if stats is not None:
            # density of the de-normalised targets
            row["ll_original_units"] = ll - float(np.log(stats.target_std))
        rows.append(row)
    return {"tasks": rows, "aggregate": aggregate(rows)}


def aggregate(rows):
    """Mean and standard error of the mean for every numeric per-task field."""
    out = {"count": len(rows)}
    for key in ("ll", "ll_original_units", "mae", "seconds"):
        if rows and key in rows[0]:
            vals = np.array([r[key] for r in rows], dtype=float)
            out[f"{key}_mean"] = float(vals.mean())
            out[f"{key}_sem"] = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return out


def cmd_eval(cfg, checkpoint=None):
    if cfg.model.kind == "GP":
        model = Model(cfg.model)
    else:
        checkpoint = checkpoint or os.path.join(cfg.out, CHECKPOINT)
        model, _, _ = load_model(checkpoint)
        if model.spec != cfg.model:
            raise ValidationError(f"{checkpoint}: model spec does not match the config")
    tasks, stats = heldout_tasks(cfg)
    report = evaluate_tasks(model, tasks, cfg.eval["seed"], stats)
    report["model"] = cfg.model.kind
    report["checkpoint"] = checkpoint
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, METRICS)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    agg = report["aggregate"]
    print(f"{cfg.model.kind}: LL {agg['ll_mean']:.3f} +- {agg['ll_sem']:.3f}, "
          f"MAE {agg['mae_mean']:.3f} +- {agg['mae_sem']:.3f} over {agg['count']} tasks -> {path}")
    return report


def read_points(path, with_y):
    """Rows of a delimited file with a header; the last column is ``y`` if ``with_y``."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: missing header row")
    delim = "\t" if "\t" in lines[0] and "," not in lines[0] else ","
    reader = csv.reader(lines, delimiter=delim)
    header = next(reader)
    if with_y and header[-1].strip() != "y":
        raise SchemaError(f"{path}: last column must be 'y'")
    width = len(header)
    rows = []
    for r, row in enumerate(reader, start=2):
        if not any(c.strip() for c in row):
            continue
        if len(row) != width:
            raise ParseError(f"{path}: expected {width} columns, found {len(row)}", row=r)
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            raise ParseError(f"{path}: non-numeric value", row=r) from None
    arr = np.array(rows, dtype=float).reshape(-1, width)
    if with_y:
        return arr[:, :-1], arr[:, -1]
    return arr, None


def cmd_predict(checkpoint, context_path, query_path, out_path):
    model, meta, _ = load_model(checkpoint)
    d = model.spec.input_dim
    Xc, yc = read_points(context_path, with_y=True)
    Xq, _ = read_points(query_path, with_y=False)
    for name, X in (("context", Xc), ("query", Xq)):
        if X.shape[1] != d:
            raise ValidationError(f"{name} file has {X.shape[1]} input columns; the model expects {d}")
    stats = meta.get("normalization")
    if stats is not None:
        stats = data_mod.NormalizationStats(**{k: tuple(v) if isinstance(v, list) else v
                                               for k, v in stats.items()})
        Xc_m, yc_m, Xq_m = stats.normalize_X(Xc), stats.normalize_y(yc), stats.normalize_X(Xq)
    else:
        Xc_m, yc_m, Xq_m = Xc, yc, Xq
    start = time.perf_counter()
    if len(Xq):
        pred = model.predict(Xc_m, yc_m, Xq_m)
        mean, var = pred.mean, pred.var + pred.noise_var
    else:
        pred, mean, var = None, np.zeros(0), np.zeros(0)
    elapsed = time.perf_counter() - start
    if stats is not None and model.spec.likelihood == "gaussian":
        mean, var = stats.denormalize_y(mean), stats.denormalize_var(var)
    header = [f"x{i}" for i in range(d)] + ["mean", "variance"]
    cols = [Xq, mean[:, None], var[:, None]]
    if model.spec.likelihood == "bernoulli":
        header.append("probability")
        cols.append((pred.prob if pred is not None else np.zeros(0))[:, None])
    table = np.concatenate(cols, axis=1) if len(Xq) else np.zeros((0, len(header)))
    parent = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(parent, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    print(f"predicted {len(Xq)} points from {len(Xc)} context points in {elapsed:.4f}s -> {out_path}")
    return elapsed


def cmd_pool(count, seed, out_path=None):
    meta = data_mod.gen_1d_regression(count, seed)
    result = data_mod.pooling_demo(meta)
    result["seed"] = seed
    text = json.dumps(result, indent=1)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    verdict = "worse" if result["pooled_per_point"] < result["per_task_mean_per_point"] else "not worse"
    print(f"{count} pooled tasks: per-point log marginal {result['pooled_per_point']:.3f} vs "
          f"per-task average {result['per_task_mean_per_point']:.3f} ({verdict} when pooled)")
    return result


def cmd_plot(input_path, out_path, context_path=None):
    from . import plotting

    if input_path.endswith(".json"):
        with open(input_path, encoding="utf-8") as fh:
            report = json.load(fh)
        if "tasks" not in report:
            raise SchemaError(f"{input_path}: not a metrics report")
        plotting.plot_report(report, out_path)
    else:
        with open(input_path, encoding="utf-8") as fh:
            first = fh.readline()
        if first.strip().split("\t") == ["step", "lr", "loss"]:
            plotting.plot_trace(read_trace(input_path), out_path)
        else:
            plotting.plot_predictions(*_read_predictions(input_path),
                                      read_points(context_path, True) if context_path else None,
                                      out_path)
    print(f"wrote {out_path}")


def _read_predictions(path):
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None or "mean" not in header or "variance" not in header:
        raise SchemaError(f"{path}: predictions need mean and variance columns")
    arr, _ = read_points(path, with_y=False)
    d = header.index("mean")
    prob = arr[:, header.index("probability")] if "probability" in header else None
    return arr[:, :d], arr[:, d], arr[:, d + 1], prob


# -- entry point --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="sgnp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_config=True):
        p.add_argument("--config", required=need_config, help="experiment YAML file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("gen", help="write training and test tasks")
    common(p)
    p = sub.add_parser("train", help="meta-train and checkpoint a model")
    common(p)
    p.add_argument("--steps", type=int, help="override the number of training steps")
    p.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.npz")
    p.add_argument("--until", type=int, help="checkpoint and stop once this step is reached")
    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out tasks")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/checkpoint.npz)")
    p = sub.add_parser("predict", help="predict at query inputs from a context file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True, help="delimited file: input columns then y")
    p.add_argument("--query", required=True, help="delimited file: input columns")
    p.add_argument("--out", required=True, help="predictions file to write")
    p = sub.add_parser("plot", help="SVG of a trace, metrics report or predictions file")
    p.add_argument("--input", required=True)
    p.add_argument("--context", help="context points to overlay on a predictions plot")
    p.add_argument("--out", required=True)
    p = sub.add_parser("pool", help="per-point likelihood of pooled versus separate GP tasks")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the numbers as JSON")
    return parser


def run(args):
    if args.command in ("gen", "train", "eval"):
        cfg = load_config(args.config, args.seed, args.out, getattr(args, "steps", None))
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume, args.until)
        return cmd_eval(cfg, args.checkpoint)
    if args.command == "predict":
        return cmd_predict(args.checkpoint, args.context, args.query, args.out)
    if args.command == "plot":
        return cmd_plot(args.input, args.out, args.context)
    return cmd_pool(args.count, args.seed, args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, TrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ResourceError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
