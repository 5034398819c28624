import csv
import math

import numpy as np
import pytest

from ccmaes import cli, harness
from ccmaes.dmp_env import ViapointProblem, test_context_grid
from ccmaes.harness import (AGGREGATE_HEADER, RUN_HEADER, ExperimentConfig, aggregate,
                            build_problem, context_rng, evaluate_viapoint_policy,
                            export_aggregate_csv, export_csv, export_runs_csv,
                            format_value, optimizer_seed, read_runs_csv, run_experiment,
                            run_single)
from ccmaes.optimizer import initial_distribution


def small(**kw):
    base = dict(problem="sphere", n=4, n_s=1, lam=8, generations=5, runs=3, base_seed=2)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_defaults():
    c = ExperimentConfig("rosenbrock", method="cacmes")
    assert (c.n, c.n_s, c.population, c.initial_step_size, c.label) == (20, 1, 50, 1.0, "cacmes")
    sc = c.surrogate_config()
    assert (sc.lambda_prime, sc.n_start, sc.c_pow) == (150, 3000, 1.0)
    a = ExperimentConfig("ackley", method="cacmes", aggressive=True)
    assert a.label == "cacmes+" and a.initial_step_size == 14.5
    assert a.surrogate_config().lambda_prime == 500 and a.surrogate_config().n_start == 100
    v = ExperimentConfig("viapoint", method="cacmes")
    assert (v.n, v.n_s, v.population, v.initial_step_size) == (20, 2, 100, 0.05)
    assert v.surrogate_config().n_start == 1000
    assert ExperimentConfig("sphere").surrogate_config() is None


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("nope")
    with pytest.raises(ValueError):
        ExperimentConfig("sphere", method="cmaes")
    with pytest.raises(ValueError):
        ExperimentConfig("sphere", aggressive=True)
    with pytest.raises(ValueError):
        ExperimentConfig("sphere", generations=0)


def test_runs_are_deterministic():
    a = run_experiment(small())
    b = run_experiment(small())
    for ca, cb in zip(a.curves, b.curves):
        np.testing.assert_array_equal(ca.values, cb.values)
    c = run_experiment(small(base_seed=3))
    assert not np.array_equal(a.curves[0].values, c.curves[0].values)


def test_single_generation_and_episode_accounting():
    curve = run_single(small(generations=1), 0)
    assert curve.values.shape == (1,) and np.isfinite(curve.values[0])
    curve = run_single(small(generations=7), 1)
    np.testing.assert_array_equal(curve.episodes, 8 * np.arange(1, 8))
    assert curve.real_evaluations == 7 * 8


def test_surrogate_method_counts_only_real_evaluations():
    cfg = small(method="cacmes", lambda_prime=24, n_start=16, n_iter=20)
    curve = run_single(cfg, 0)
    assert curve.real_evaluations == 5 * 8
    np.testing.assert_array_equal(curve.episodes, 8 * np.arange(1, 6))


def test_methods_share_problem_and_contexts():
    a, b = small(), small(method="accmaes")
    np.testing.assert_array_equal(build_problem(a).G, build_problem(b).G)
    ra, rb = context_rng(a, 4), context_rng(b, 4)
    np.testing.assert_array_equal(ra.uniform(size=10), rb.uniform(size=10))
    assert optimizer_seed(a, 4) != optimizer_seed(b, 4)
    assert optimizer_seed(a, 4) != optimizer_seed(a, 5)


def test_parallel_matches_serial():
    serial = run_experiment(small(runs=2))
    parallel = run_experiment(small(runs=2), jobs=2)
    for cs, cp in zip(serial.curves, parallel.curves):
        np.testing.assert_array_equal(cs.values, cp.values)


def test_divergence_fills_nan(monkeypatch):
    real_build = harness.build_problem

    class Exploding:
        def __init__(self, inner):
            self.inner, self.calls = inner, 0

        def sample_context(self, rng):
            return self.inner.sample_context(rng)

        def __call__(self, s, theta):
            self.calls += 1
            return -1e200 if self.calls > 16 else self.inner(s, theta)

    monkeypatch.setattr(harness, "build_problem", lambda cfg: Exploding(real_build(cfg)))
    result = run_experiment(small(runs=2))
    for c in result.curves:
        assert c.diverged_at == 3
        assert np.all(np.isfinite(c.values[:2])) and np.all(np.isnan(c.values[2:]))
    assert result.all_diverged
    assert np.isnan(result.table.mean[2]) and np.isfinite(result.table.mean[1])


def test_format_value():
    assert format_value(float("nan")) == "NaN"
    assert format_value(0.1) == "0.1"
    assert float(format_value(1 / 3)) == 1 / 3


def test_csv_roundtrip_and_aggregate(tmp_path):
    result = run_experiment(small(out=tmp_path))
    runs_path = tmp_path / "sphere_ccmaes_runs.csv"
    agg_path = tmp_path / "sphere_ccmaes_aggregate.csv"
    with runs_path.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RUN_HEADER and len(rows) == 1 + 3 * 5
    assert rows[1][:4] == ["ccmaes", "0", "1", "8"]
    with agg_path.open() as fh:
        agg = list(csv.DictReader(fh))
    assert tuple(agg[0].keys()) == AGGREGATE_HEADER and len(agg) == 5

    per_run = read_runs_csv(runs_path)
    data = np.vstack([per_run[r] for r in sorted(per_run)])
    for g, row in enumerate(agg):
        assert abs(float(row["mean"]) - data[:, g].mean()) <= 1e-12 * abs(data[:, g].mean())
        assert abs(float(row["std"]) - data[:, g].std()) <= 1e-12 * max(1.0, data[:, g].std())
        assert int(row["n_runs"]) == 3
    for c in result.curves:
        np.testing.assert_array_equal(per_run[c.run], c.values)

    again = tmp_path / "again.csv"
    export_runs_csv(result.curves, again)
    assert again.read_bytes() == runs_path.read_bytes()
    export_csv(result.table, again)
    assert again.read_bytes() == agg_path.read_bytes()


def test_nan_serialization(tmp_path):
    result = run_experiment(small(runs=1))
    curve = result.curves[0]
    curve.values[3:] = np.nan
    path = export_csv(curve, tmp_path / "nan.csv")
    lines = path.read_text().splitlines()
    assert lines[4].endswith(",NaN") and lines[5].endswith(",NaN")
    values = read_runs_csv(path)[0]
    assert np.isnan(values[3:]).all() and np.isfinite(values[:3]).all()


def test_single_run_std_zero(tmp_path):
    table = run_experiment(small(runs=1)).table
    np.testing.assert_array_equal(table.std, 0.0)
    export_aggregate_csv(table, tmp_path / "a.csv")


def test_aggregate_propagates_nan():
    r = run_experiment(small(runs=2))
    r.curves[1].values[-1] = np.nan
    table = aggregate(r.curves, "ccmaes")
    assert math.isnan(table.mean[-1]) and math.isnan(table.std[-1])
    assert np.isfinite(table.mean[:-1]).all()


def test_viapoint_policy_evaluation():
    dist = initial_distribution(3, 20, 0.05, constant_feature=True)
    dist.W[:] = 0.0
    prob = ViapointProblem()
    expected = np.mean([prob(s, np.zeros(20)) for s in test_context_grid()])
    assert evaluate_viapoint_policy(dist) == pytest.approx(expected, rel=1e-15)


def test_viapoint_run_records_test_curve(tmp_path):
    cfg = ExperimentConfig("viapoint", lam=10, generations=2, runs=1, out=tmp_path)
    result = run_experiment(cfg)
    curve = result.curves[0]
    assert curve.test_values.shape == (2,) and np.isfinite(curve.test_values).all()
    assert curve.initial_test_value == pytest.approx(evaluate_viapoint_policy(
        initial_distribution(3, 20, 0.05, constant_feature=True)))
    assert (tmp_path / "viapoint_ccmaes_test_aggregate.csv").exists()


# -- command line ---------------------------------------------------------------

def test_cli_success(tmp_path, capsys):
    code = cli.main(["bench", "--problem", "sphere", "--n", "3", "--lambda", "6",
                     "--generations", "3", "--runs", "2", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "sphere_ccmaes_runs.csv").exists()
    assert "final mean" in capsys.readouterr().out


def test_cli_bad_arguments(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["bench", "--problem", "nope", "--generations", "1", "--out", str(tmp_path)])
    assert exc.value.code == 1
    code = cli.main(["bench", "--problem", "sphere", "--generations", "0", "--out",
                     str(tmp_path)])
    assert code == 1
    code = cli.main(["bench", "--problem", "sphere", "--aggressive", "--generations", "1",
                     "--out", str(tmp_path)])
    assert code == 1


def test_cli_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = cli.main(["bench", "--problem", "sphere", "--n", "3", "--lambda", "6",
                     "--generations", "1", "--runs", "1", "--out", str(blocker / "sub")])
    assert code == 2


def test_cli_all_diverged(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "build_problem",
                        lambda cfg: _AlwaysHuge(harness.make_contextual(
                            harness.BaseFunction("sphere", cfg.n), cfg.n_s, 0)))
    code = cli.main(["bench", "--problem", "sphere", "--n", "3", "--lambda", "6",
                     "--generations", "2", "--runs", "2", "--out", str(tmp_path)])
    assert code == 3
    assert "NaN" in (tmp_path / "sphere_ccmaes_runs.csv").read_text()


class _AlwaysHuge:
    def __init__(self, inner):
        self.inner = inner

    def sample_context(self, rng):
        return self.inner.sample_context(rng)

    def __call__(self, s, theta):
        return -1e101
