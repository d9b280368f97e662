import numpy as np
import pytest

from sgnp.data import (MetaDataset, Task, gen_1d_regression, gen_2d_classification,
                       load_csv_tasks, load_meta_dataset, pool_tasks, pooling_demo,
                       sample_gp_prior, save_meta_dataset, split_context_target)
from sgnp.errors import ParseError, SchemaError, ValidationError
from sgnp.kernels import gram, se


def test_prior_covariance_matches_gram():
    X = np.array([[0.0], [0.3], [1.2]])
    rng = np.random.default_rng(0)
    draws = sample_gp_prior(X, se(0.5), rng, num_samples=50_000)
    emp = np.cov(draws.T)
    K = gram(se(0.5), X).data
    # standard error of a sample covariance entry: sqrt((K_ij^2 + K_ii K_jj) / N)
    se_ = np.sqrt((K ** 2 + np.outer(np.diag(K), np.diag(K))) / len(draws))
    assert np.all(np.abs(emp - K) < 3 * se_)


def test_prior_degenerate_and_reproducible():
    X = np.linspace(-1, 1, 5)
    f = sample_gp_prior(X, se(0.5, 1e-8), np.random.default_rng(1))
    assert np.max(np.abs(f)) < 1e-6
    a = sample_gp_prior(X, se(0.5), np.random.default_rng(2))
    b = sample_gp_prior(X, se(0.5), np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValidationError):
        sample_gp_prior(np.zeros((0, 1)), se(0.5), np.random.default_rng(0))


def test_1d_regression_ranges_and_variance():
    meta = gen_1d_regression(400, seed=3)
    assert all(10 <= t.n <= 100 for t in meta)
    assert all(np.all(np.abs(t.X) <= 3) for t in meta)
    y = np.concatenate([t.y for t in meta])
    assert np.var(y) == pytest.approx(1 + 0.05 ** 2, rel=0.05)
    test = gen_1d_regression(100, seed=4, test=True)
    assert all(5 <= t.n <= 30 for t in test)


def test_2d_classification_labels_balance_sizes():
    meta = gen_2d_classification(300, seed=5)
    assert all(t.is_binary and set(np.unique(t.y)) <= {0.0, 1.0} for t in meta)
    assert all(30 <= t.n <= 150 for t in meta)
    assert all(np.all(np.abs(t.X) <= 1) for t in meta)
    balance = np.mean(np.concatenate([t.y for t in meta]))
    assert abs(balance - 0.5) < 0.03
    assert all(60 <= t.n <= 300 for t in gen_2d_classification(30, seed=6, test=True))


def test_generators_deterministic_and_seed_dependent():
    a, b, c = gen_1d_regression(3, 7), gen_1d_regression(3, 7), gen_1d_regression(3, 8)
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.X, t.X)
        np.testing.assert_array_equal(s.y, t.y)
    assert not np.array_equal(a[0].X[:5], c[0].X[:5])
    with pytest.raises(ValidationError):
        gen_1d_regression(0, 1)


def test_split_exact_half():
    t = Task(np.arange(10.0), np.zeros(10))
    s = split_context_target(t, (0.5, 0.5), np.random.default_rng(0))
    assert len(s.context) == 5 and len(s.target) == 5
    assert not set(s.context) & set(s.target)
    assert sorted(np.concatenate([s.context, s.target])) == list(range(10))


def test_split_full_target_and_validity():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3, 17):
        t = Task(np.arange(float(n)), np.zeros(n))
        s = split_context_target(t, (0.05, 0.5), rng, mode="full-target")
        assert len(s.target) == n and len(s.context) >= 1
    for _ in range(50):
        t = Task(np.arange(3.0), np.zeros(3))
        s = split_context_target(t, (0.05, 0.95), rng)
        assert len(s.context) >= 1 and len(s.target) >= 1
    with pytest.raises(ValidationError):
        split_context_target(t, (0.0, 0.5), rng)


def test_task_validation():
    with pytest.raises(ValidationError):
        Task(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValidationError):
        Task(np.zeros((3, 1)), np.zeros(3), context=[0, 0])
    with pytest.raises(ValidationError):
        Task(np.zeros((3, 1)), np.zeros(3), target=[5])
    with pytest.raises(ValidationError):
        MetaDataset([])


def test_pool_tasks():
    a, b = Task(np.zeros((10, 1)), np.zeros(10)), Task(np.ones((20, 1)), np.ones(20))
    assert pool_tasks(MetaDataset([a, b])).n == 30
    single = pool_tasks(MetaDataset([a]))
    np.testing.assert_array_equal(single.X, a.X)
    with pytest.raises(ValidationError):
        pool_tasks(MetaDataset([a, Task(np.zeros((2, 2)), np.zeros(2))]))


def test_pooling_hurts_per_point_likelihood():
    result = pooling_demo(gen_1d_regression(20, seed=9))
    assert result["pooled_per_point"] < result["per_task_mean_per_point"]


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_csv_normalization(tmp_path):
    rng = np.random.default_rng(10)
    rows = ["t,temp,power,zone"]
    for zone in ("z1", "z2", "z3"):
        for _ in range(30):
            rows.append(f"{rng.uniform(0, 100)},{rng.normal(20, 5)},{rng.normal(500, 80)},{zone}")
    path = write_csv(tmp_path / "d.csv", "\n".join(rows) + "\n")
    meta, stats = load_csv_tasks(path, ["t", "temp"], "power", "zone", train_groups=["z1", "z2"])
    assert [t.name for t in meta] == ["z1", "z2", "z3"]
    X = np.concatenate([t.X for t in meta])
    assert np.all(np.abs(X.mean(axis=0)) <= 1e-10)
    np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-10)
    ytrain = np.concatenate([meta[0].y, meta[1].y])
    assert abs(ytrain.mean()) <= 1e-10 and abs(ytrain.std() - 1) <= 1e-10
    raw = np.array([float(r.split(",")[2]) for r in rows[61:91]])
    np.testing.assert_allclose(stats.denormalize_y(meta[2].y), raw, rtol=1e-12)
    assert stats.target_groups == ("z1", "z2")


def test_csv_tab_delimited(tmp_path):
    path = write_csv(tmp_path / "d.tsv", "a\tb\tg\n1\t2\tx\n2\t3\tx\n4\t1\ty\n")
    meta, _ = load_csv_tasks(path, ["a"], "b", "g")
    assert len(meta) == 2 and meta[0].n == 2


def test_csv_errors(tmp_path):
    good = "a,b,g\n1,2,x\n2,3,x\n"
    with pytest.raises(SchemaError, match="'c'"):
        load_csv_tasks(write_csv(tmp_path / "1.csv", good), ["c"], "b", "g")
    with pytest.raises(ParseError) as info:
        load_csv_tasks(write_csv(tmp_path / "2.csv", "a,b,g\n1,2,x\n1,oops,x\n"), ["a"], "b", "g")
    assert info.value.row == 3
    with pytest.raises(ValidationError, match="zero variance"):
        load_csv_tasks(write_csv(tmp_path / "3.csv", "a,b,g\n1,2,x\n1,3,x\n"), ["a"], "b", "g")
    with pytest.raises(ValidationError):
        load_csv_tasks(write_csv(tmp_path / "4.csv", good), ["a"], "b", "g", train_groups=["nope"])


def test_meta_dataset_directory_roundtrip(tmp_path):
    meta = gen_2d_classification(3, seed=11)
    meta.tasks[1] = split_context_target(meta[1], (0.5, 0.5), np.random.default_rng(0))
    save_meta_dataset(meta, tmp_path / "ds")
    back = load_meta_dataset(tmp_path / "ds")
    assert back.provenance == meta.provenance
    for a, b in zip(meta, back):
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(back[1].context, meta[1].context)


def test_csv_wide_layout_with_timestamps(tmp_path):
    rows = ["when,temp,z1,z2,z3"]
    rng = np.random.default_rng(12)
    for h in range(24):
        rows.append(f"1/1/2017 {h}:00,{rng.normal(15, 3)},{rng.normal(30, 4)},{rng.normal(20, 3)},"
                    f"{rng.normal(18, 2)}")
    path = write_csv(tmp_path / "w.csv", "\n".join(rows) + "\n")
    meta, stats = load_csv_tasks(path, ["when", "temp"], ["z1", "z2", "z3"],
                                 train_groups=["z1", "z2"], datetime_format="%m/%d/%Y %H:%M")
    assert [t.name for t in meta] == ["z1", "z2", "z3"] and all(t.n == 24 for t in meta)
    # the time feature is shared by every task and spans one day in one-hour steps
    np.testing.assert_array_equal(meta[0].X, meta[2].X)
    hours = np.diff(meta[0].X[:, 0]) * stats.feature_std[0] * 24
    np.testing.assert_allclose(hours, 1.0, rtol=1e-9)
    raw = np.array([float(r.split(",")[4]) for r in rows[1:]])
    np.testing.assert_allclose(stats.denormalize_y(meta[2].y), raw, rtol=1e-12)
    with pytest.raises(ValidationError):
        load_csv_tasks(path, ["temp"], ["z1"], group="when")
    with pytest.raises(ParseError):
        load_csv_tasks(path, ["when"], ["z1"])
