import filecmp
import json
import os
import shutil

import numpy as np
import pytest
import yaml

from sgnp import cli
from sgnp.data import Task
from sgnp.errors import TrainingError
from sgnp.models import Prediction

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

TINY_SGNP = {
    "seed": 3,
    "data": {"source": "1d_regression", "count": 4},
    "model": {"kind": "SGNP", "m": 4, "f_net": "deepset", "deepset_width": 8,
              "kernel": {"type": "se_ard", "lengthscales": [0.7], "scale": 1.0}, "noise": 0.1},
    "train": {"steps": 100, "batch_size": 2, "checkpoint_every": 50},
    "eval": {"count": 6},
}


def write_config(tmp_path, raw, name="exp.yaml"):
    raw = dict(raw)
    raw.setdefault("out", str(tmp_path / "run"))
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return str(path)


def write_rows(path, header, rows):
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


# -- config -------------------------------------------------------------------------------

def test_unknown_keys_rejected(tmp_path):
    for bad in ({**TINY_SGNP, "sed": 1},
                {**TINY_SGNP, "model": {**TINY_SGNP["model"], "lenghtscale": 1}},
                {**TINY_SGNP, "train": {"stepz": 10}},
                {**TINY_SGNP, "eval": {"cout": 3}},
                {**TINY_SGNP, "data": {"source": "1d_regression", "count": 4, "n": 3}}):
        assert cli.main(["gen", "--config", write_config(tmp_path, bad)]) == cli.EXIT_INVALID


def test_missing_config_is_io_error(tmp_path):
    assert cli.main(["gen", "--config", str(tmp_path / "absent.yaml")]) == cli.EXIT_IO


def test_seed_override_propagates(tmp_path):
    cfg = cli.load_config(write_config(tmp_path, TINY_SGNP), seed=11)
    assert cfg.data["seed"] == 11 and cfg.train.seed == 11 and cfg.eval["seed"] == 12


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(CONFIGS) if f.endswith(".yaml")))
def test_shipped_configs_parse(name):
    cfg = cli.load_config(os.path.join(CONFIGS, name))
    assert cfg.model.kind in ("GP", "SGNP", "ConvSGNP", "sConvSGNP", "CNP", "ConvGNP")


# -- gen ----------------------------------------------------------------------------------

def test_gen_writes_tasks_deterministically(tmp_path):
    path = write_config(tmp_path, {**TINY_SGNP, "data": {"source": "1d_regression", "count": 5}})
    assert cli.main(["gen", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["gen", "--config", path, "--out", str(tmp_path / "b")]) == 0
    train = tmp_path / "a" / "data" / "train"
    files = sorted(os.listdir(train))
    assert files == ["manifest.json"] + [f"task_{i:05d}.csv" for i in range(5)]
    for sub in ("train", "test"):
        a, b = tmp_path / "a" / "data" / sub, tmp_path / "b" / "data" / sub
        match, mismatch, errors = filecmp.cmpfiles(a, b, os.listdir(a), shallow=False)
        assert not mismatch and not errors
    bad = write_config(tmp_path, {**TINY_SGNP, "data": {"source": "1d_regression", "count": 0}})
    assert cli.main(["gen", "--config", bad]) == cli.EXIT_INVALID


# -- train --------------------------------------------------------------------------------

def read_trace(run):
    return cli.read_trace(os.path.join(run, cli.TRACE))


def test_train_writes_checkpoint_trace_and_snapshot(tmp_path):
    path = write_config(tmp_path, TINY_SGNP)
    run = str(tmp_path / "run")
    assert cli.main(["train", "--config", path]) == 0
    trace = read_trace(run)
    assert len(trace) == 100 // 50 + 1 and [r[0] for r in trace] == [0, 50, 100]
    model, meta, adam = cli.load_model(os.path.join(run, cli.CHECKPOINT))
    assert meta["step"] == 100 and adam.step == 100
    pred = model.predict(np.array([[0.0], [1.0]]), np.array([0.5, -0.5]), np.array([[0.5]]))
    assert np.all(np.isfinite(pred.mean)) and np.all(pred.var >= 0)
    snap = yaml.safe_load(open(os.path.join(run, cli.RESOLVED), encoding="utf-8"))
    assert snap["train"]["steps"] == 100 and snap["model"]["kind"] == "SGNP"
    # the snapshot is itself a valid config that resolves to the same experiment
    again = cli.parse_config(snap)
    assert again.model == model.spec and again.train == cli.load_config(path).train


def test_resume_continues_the_same_trace(tmp_path):
    path = write_config(tmp_path, TINY_SGNP)
    full, part = str(tmp_path / "full"), str(tmp_path / "part")
    assert cli.main(["train", "--config", path, "--out", full]) == 0
    assert cli.main(["train", "--config", path, "--out", part, "--until", "70"]) == 0
    interrupted = read_trace(part)
    assert interrupted[-1][0] == 50
    assert cli.main(["train", "--config", path, "--out", part, "--resume"]) == 0
    resumed = read_trace(part)
    steps = [r[0] for r in resumed]
    assert steps == sorted(steps)
    assert resumed == read_trace(full)
    a, _, _ = cli.load_model(os.path.join(full, cli.CHECKPOINT))
    b, _, _ = cli.load_model(os.path.join(part, cli.CHECKPOINT))
    for name in a.store:
        np.testing.assert_array_equal(a.store[name], b.store[name])


def test_training_abort_exit_code_and_diagnostics(tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise TrainingError("aborted after 11 consecutive non-finite losses",
                            {"step": 10, "errors": ["step 0: boom"]})

    monkeypatch.setattr(cli, "meta_train", explode)
    path = write_config(tmp_path, TINY_SGNP)
    assert cli.main(["train", "--config", path]) == cli.EXIT_NUMERICAL
    diag = json.load(open(tmp_path / "run" / cli.DIAGNOSTICS, encoding="utf-8"))
    assert diag["step"] == 10 and diag["errors"] == ["step 0: boom"]


# -- eval ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    path = write_config(tmp, TINY_SGNP)
    assert cli.main(["train", "--config", path]) == 0
    return tmp, path


def test_eval_report_aggregate_and_determinism(trained, monkeypatch):
    tmp, path = trained
    assert cli.main(["eval", "--config", path]) == 0
    report = json.load(open(tmp / "run" / cli.METRICS, encoding="utf-8"))
    rows = report["tasks"]
    assert len(rows) == 6 and report["aggregate"]["count"] == 6
    for key in ("ll", "mae"):
        vals = np.array([r[key] for r in rows])
        assert report["aggregate"][f"{key}_mean"] == pytest.approx(vals.mean(), abs=1e-12)
        assert report["aggregate"][f"{key}_sem"] == pytest.approx(
            vals.std(ddof=1) / np.sqrt(len(vals)), abs=1e-12)
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.main(["eval", "--config", path, "--out", str(tmp / "again"),
                     "--checkpoint", str(tmp / "run" / cli.CHECKPOINT)]) == 0
    again = json.load(open(tmp / "again" / cli.METRICS, encoding="utf-8"))
    strip = lambda rep: [{k: v for k, v in r.items() if k != "seconds"} for r in rep["tasks"]]
    assert strip(again) == strip(report)
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert cli.main(["eval", "--config", path]) == cli.EXIT_INVALID


def test_eval_rejects_mismatched_spec(trained, tmp_path):
    tmp, _ = trained
    other = {**TINY_SGNP, "model": {**TINY_SGNP["model"], "m": 5}}
    path = write_config(tmp_path, other)
    assert cli.main(["eval", "--config", path, "--checkpoint",
                     str(tmp / "run" / cli.CHECKPOINT)]) == cli.EXIT_INVALID


def test_perfect_prediction_log_likelihood():
    sigma = 0.2

    class Perfect:
        spec = cli.ModelSpec("SGNP")

        def predict(self, Xc, yc, Xq, full_cov=False, rng=None):
            y = truth[np.round(Xq[:, 0] * 10).astype(int)]
            return Prediction(y, np.zeros(len(y)), np.zeros((len(y), len(y))), sigma ** 2)

    truth = np.linspace(-1, 1, 10)
    task = Task(np.arange(10) / 10, truth, context=[0, 1, 2], target=[3, 4, 5, 6, 7, 8, 9])
    report = cli.evaluate_tasks(Perfect(), [task], seed=0)
    assert report["tasks"][0]["ll"] == pytest.approx(-0.5 * np.log(2 * np.pi * sigma ** 2), rel=1e-12)
    assert report["tasks"][0]["mae"] == 0.0


# -- predict ------------------------------------------------------------------------------

def test_predict_files(trained, tmp_path):
    tmp, _ = trained
    ckpt = str(tmp / "run" / cli.CHECKPOINT)
    ctx = write_rows(tmp_path / "c.csv", ["x0", "y"], [[0.0, 1.0], [0.5, 0.2], [1.0, -0.3]])
    query = write_rows(tmp_path / "q.csv", ["x0"], [[0.25], [0.25], [0.25], [2.0]])
    out = tmp_path / "p.csv"
    assert cli.main(["predict", "--checkpoint", ckpt, "--context", ctx, "--query", query,
                     "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x0,mean,variance" and len(lines) == 5
    assert lines[1] == lines[2] == lines[3]
    empty = write_rows(tmp_path / "e.csv", ["x0"], [])
    assert cli.main(["predict", "--checkpoint", ckpt, "--context", ctx, "--query", empty,
                     "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["x0,mean,variance"]


def test_predict_input_errors(trained, tmp_path, capsys):
    tmp, _ = trained
    ckpt = str(tmp / "run" / cli.CHECKPOINT)
    ctx = write_rows(tmp_path / "c.csv", ["x0", "y"], [[0.0, 1.0]])
    wide = write_rows(tmp_path / "w.csv", ["x0", "x1"], [[0.0, 1.0]])
    out = str(tmp_path / "p.csv")
    assert cli.main(["predict", "--checkpoint", ckpt, "--context", ctx, "--query", wide,
                     "--out", out]) == cli.EXIT_INVALID
    bad = tmp_path / "bad.csv"
    bad.write_text("x0\n0.1\nzero\n", encoding="utf-8")
    assert cli.main(["predict", "--checkpoint", ckpt, "--context", ctx, "--query", str(bad),
                     "--out", out]) == cli.EXIT_INVALID
    assert "row 3" in capsys.readouterr().err


# -- plot ---------------------------------------------------------------------------------

def test_plots_are_byte_stable(trained, tmp_path):
    tmp, _ = trained
    trace = str(tmp / "run" / cli.TRACE)
    for name in ("a.svg", "b.svg"):
        assert cli.main(["plot", "--input", trace, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    preds = write_rows(tmp_path / "p.csv", ["x0", "mean", "variance"],
                       [[x, np.sin(x), 0.1] for x in np.linspace(-1, 1, 20)])
    ctx = write_rows(tmp_path / "c.csv", ["x0", "y"], [[0.0, 0.0]])
    for name in ("c.svg", "d.svg"):
        assert cli.main(["plot", "--input", preds, "--context", ctx, "--out",
                         str(tmp_path / name)]) == 0
    assert (tmp_path / "c.svg").read_bytes() == (tmp_path / "d.svg").read_bytes()


def test_plot_2d_and_unsupported_3d(tmp_path):
    g = np.linspace(-1, 1, 6)
    rows = [[a, b, 0.0, 1.0, 1 / (1 + np.exp(-a))] for a in g for b in g]
    preds = write_rows(tmp_path / "p.csv", ["x0", "x1", "mean", "variance", "probability"], rows)
    ctx = write_rows(tmp_path / "c.csv", ["x0", "x1", "y"], [[0.1, 0.2, 1.0], [-0.5, 0.3, 0.0]])
    assert cli.main(["plot", "--input", preds, "--context", ctx, "--out",
                     str(tmp_path / "s.svg")]) == 0
    assert (tmp_path / "s.svg").read_text().startswith("<?xml")
    cube = write_rows(tmp_path / "q.csv", ["x0", "x1", "x2", "mean", "variance"], [[0, 0, 0, 0, 1]])
    assert cli.main(["plot", "--input", cube, "--out", str(tmp_path / "x.svg")]) == cli.EXIT_INVALID


def test_prior_band_is_flat_and_non_negative(trained, tmp_path):
    tmp, _ = trained
    from sgnp.plotting import band

    model, _, _ = cli.load_model(str(tmp / "run" / cli.CHECKPOINT))
    pred = model.predict(np.zeros((0, 1)), np.zeros(0), np.linspace(-3, 3, 25)[:, None])
    lo, hi = band(pred.mean, pred.var)
    scale = float(np.exp(model.store["kernel.log_scale"]))
    np.testing.assert_allclose(hi, 2 * scale, rtol=1e-6)
    np.testing.assert_allclose(lo, -2 * scale, rtol=1e-6)
    lo, hi = band(np.zeros(3), np.array([-1e-12, 0.0, 4.0]))
    assert np.all(hi - lo >= 0) and hi[2] == 4.0


def test_plot_report(trained, tmp_path):
    tmp, path = trained
    assert cli.main(["eval", "--config", path]) == 0
    assert cli.main(["plot", "--input", str(tmp / "run" / cli.METRICS), "--out",
                     str(tmp_path / "r.svg")]) == 0


# -- pooling demo --------------------------------------------------------------------------

def test_pool_command(tmp_path):
    out = tmp_path / "pool.json"
    assert cli.main(["pool", "--count", "20", "--seed", "0", "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    assert result["pooled_per_point"] < result["per_task_mean_per_point"]


# -- shipped configs: one-step dry runs ------------------------------------------------------

def fake_tetouan(path):
    """Hourly January-March rows with the UCI column names and plausible shapes."""
    rng = np.random.default_rng(0)
    lines = ["DateTime,Temperature,Humidity,Wind Speed,Zone 1 Power Consumption,"
             "Zone 2  Power Consumption,Zone 3  Power Consumption"]
    hours = 24 * 90
    for h in range(hours):
        day, hour = divmod(h, 24)
        month = 1 if day < 31 else 2 if day < 59 else 3
        dom = day + 1 - (0 if month == 1 else 31 if month == 2 else 59)
        daily = np.sin(2 * np.pi * hour / 24)
        temp = 15 + 5 * daily + rng.normal()
        zones = [30000 + 8000 * daily + rng.normal(0, 500) * k for k in (1, 0.8, 0.6)]
        lines.append(f"{month}/{dom}/2017 {hour}:00,{temp:.2f},{70 - 10 * daily:.1f},0.08,"
                     + ",".join(f"{z:.2f}" for z in zones))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(CONFIGS) if f.endswith(".yaml")))
def test_shipped_config_dry_run(name, tmp_path):
    raw = yaml.safe_load(open(os.path.join(CONFIGS, name), encoding="utf-8"))
    if raw["data"]["source"] == "csv":
        (tmp_path / "data").mkdir()
        fake_tetouan(tmp_path / "data" / "tetouan.csv")
    else:
        # keep the dry run cheap: a handful of test tasks is enough to exercise eval
        raw["eval"]["count"] = 3
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    out = str(tmp_path / "run")
    if raw["model"]["kind"] != "GP":
        assert cli.main(["train", "--config", str(path), "--out", out, "--steps", "1"]) == 0
        assert len(read_trace(out)) == 2
    assert cli.main(["eval", "--config", str(path), "--out", out]) == 0
    report = json.load(open(os.path.join(out, cli.METRICS), encoding="utf-8"))
    assert np.isfinite(report["aggregate"]["ll_mean"])


def test_predict_timing_scales_near_linearly(tmp_path):
    from sgnp.kernels import se
    from sgnp.models import Model, ModelSpec

    model = Model(ModelSpec("SGNP", kernel=se(0.5), m=64, f_net="deepset", deepset_width=32))
    ckpt = str(tmp_path / "sgnp.npz")
    cli.save_model(ckpt, model)
    rng = np.random.default_rng(0)
    query = write_rows(tmp_path / "q.csv", ["x0"], rng.uniform(-1, 1, size=(50, 1)))
    times = {}
    for n in (16384, 32768):
        X = rng.uniform(-1, 1, size=n)
        ctx = write_rows(tmp_path / f"c{n}.csv", ["x0", "y"], np.c_[X, np.sin(3 * X)])
        times[n] = min(cli.cmd_predict(ckpt, ctx, query, str(tmp_path / "p.csv")) for _ in range(9))
    assert 1.5 <= times[32768] / times[16384] <= 3.0, times
