import json

import numpy as np
import pytest

from control.mpcc import StageDiagnostics, TrajectorySolution
from core.errors import PreconditionError
from experiments import montecarlo
from experiments.artifacts import emit_artifacts, report_to_dict
from experiments.montecarlo import (
    ExperimentPlan,
    ExperimentReport,
    run_experiment,
    run_rng,
    sample_goal,
    with_k1_goal,
    worker_count,
)


def _fake_solution(scenario, spec, status="converged"):
    X = np.tile(scenario.initial_state.vector, (spec.horizon_N + 1, 1))
    X[:, 0:3] = np.linspace(X[0, 0:3], spec.goal_state.k1, spec.horizon_N + 1)
    stage = StageDiagnostics(1e-5, status, 1e-7, 0.5, 1e-6, 3, 40, 10.0, 0.25)
    return TrajectorySolution(X, np.zeros((spec.horizon_N + 1, 6)), np.zeros((spec.horizon_N + 1, 2)),
                              status, (stage,), spec.id, spec.step_h)


@pytest.fixture
def fake_solver(monkeypatch):
    """Replaces the planner with straight-line K1 paths to the sampled goals."""
    calls = []

    def solve_subtask_sequence(scenario, specs, opts):
        calls.append(specs)
        return _fake_solution(scenario, specs[0]), _fake_solution(scenario, specs[1])

    monkeypatch.setattr(montecarlo, "solve_subtask_sequence", solve_subtask_sequence)
    return calls


def _plan(**kw):
    kw.setdefault("runs", 3)
    return ExperimentPlan("1", horizon_N=4, simulate=False, **kw)


# ── goal sampling ───────────────────────────────────────────────────────────

def test_zero_covariance_returns_the_mean():
    mean = np.array([0.1, 0.55, 0.53])
    np.testing.assert_array_equal(sample_goal(mean, (0.0, 0.0, 0.0), run_rng(0, 0)), mean)


def test_sample_variance():
    rng = run_rng(3, 0)
    draws = np.array([sample_goal((0.0, 0.0, 0.0), (0.005, 0.005, 0.005), rng) for _ in range(10_000)])
    np.testing.assert_allclose(draws.var(axis=0), 0.005, rtol=0.1)
    np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.005)


def test_runs_have_independent_reproducible_streams():
    a = sample_goal((0, 0, 0), (1, 1, 1), run_rng(7, 2))
    b = sample_goal((0, 0, 0), (1, 1, 1), run_rng(7, 2))
    c = sample_goal((0, 0, 0), (1, 1, 1), run_rng(7, 3))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_goal_rejects_bad_input(rng):
    with pytest.raises(PreconditionError):
        sample_goal((0, 0), (1, 1, 1), rng)
    with pytest.raises(PreconditionError):
        sample_goal((0, 0, 0), (1, -1, 1), rng)


def test_with_k1_goal_only_moves_k1(scenario1):
    spec = with_k1_goal(scenario1.subtask_s1, (0.2, 0.5, 0.6))
    np.testing.assert_allclose(spec.goal_state.k1, [0.2, 0.5, 0.6])
    np.testing.assert_array_equal(spec.goal_state.k2, scenario1.subtask_s1.goal_state.k2)
    assert spec.horizon_N == scenario1.subtask_s1.horizon_N


@pytest.mark.parametrize("kwargs", [
    dict(runs=0),
    dict(goal_noise_cov=(0.1, 0.1)),
    dict(goal_noise_cov=(0.1, -0.1, 0.1)),
    dict(goal_noise_mean_s1=(0.1, 0.2)),
])
def test_plan_validation(kwargs):
    with pytest.raises(PreconditionError):
        ExperimentPlan("1", **kwargs)


def test_worker_count(monkeypatch):
    monkeypatch.delenv(montecarlo.THREADS_ENV, raising=False)
    assert worker_count(10) == 1
    monkeypatch.setenv(montecarlo.THREADS_ENV, "4")
    assert worker_count(10) == 4
    assert worker_count(2) == 2
    monkeypatch.setenv(montecarlo.THREADS_ENV, "many")
    assert worker_count(10) == 1
    monkeypatch.setenv(montecarlo.THREADS_ENV, "0")
    assert worker_count(10) == 1


# ── batch driver ────────────────────────────────────────────────────────────

def test_run_counts(fake_solver):
    report = run_experiment(_plan())
    assert len(report.records) == 3 and len(fake_solver) == 3
    assert [r.index for r in report.records] == [0, 1, 2]
    assert report.feasible_count == 3
    assert report.success_count == 0
    assert all(r.outcome is None for r in report.records)
    assert report.timing_summary().endswith("[s]")


def test_zero_covariance_gives_identical_goals(fake_solver):
    report = run_experiment(_plan(goal_noise_cov=(0.0, 0.0, 0.0)))
    for r in report.records:
        np.testing.assert_array_equal(r.goal_s1, report.mean_s1)
        np.testing.assert_array_equal(r.goal_s2, report.mean_s2)


def test_goal_means_default_to_the_scenario(fake_solver, scenario1):
    report = run_experiment(_plan())
    np.testing.assert_allclose(report.mean_s1, scenario1.subtask_s1.goal_state.k1)
    np.testing.assert_allclose(report.mean_s2, scenario1.subtask_s2.goal_state.k1)


def test_solver_errors_become_records(monkeypatch):
    def broken(scenario, specs, opts):
        raise PreconditionError("guess has the wrong length")

    monkeypatch.setattr(montecarlo, "solve_subtask_sequence", broken)
    report = run_experiment(_plan(runs=2))
    assert [r.status_s1 for r in report.records] == ["error", "error"]
    assert report.records[0].error.startswith("PreconditionError")
    assert report.feasible_count == 0


def test_unexpected_exceptions_do_not_abort_the_batch(monkeypatch):
    def broken(scenario, specs, opts):
        raise RuntimeError("boom")

    monkeypatch.setattr(montecarlo, "solve_subtask_sequence", broken)
    report = run_experiment(_plan(runs=2))
    assert len(report.records) == 2
    assert all(r.error == "RuntimeError: boom" for r in report.records)


def test_s2_skipped_is_not_feasible(monkeypatch):
    def s1_fails(scenario, specs, opts):
        return _fake_solution(scenario, specs[0], status="max-iter"), None

    monkeypatch.setattr(montecarlo, "solve_subtask_sequence", s1_fails)
    report = run_experiment(_plan(runs=1))
    r = report.records[0]
    assert (r.status_s1, r.status_s2) == ("max-iter", "skipped")
    assert not r.feasible and not r.success


# ── artifacts ───────────────────────────────────────────────────────────────

def test_same_seed_same_files(fake_solver, tmp_path):
    for name in ("a", "b"):
        emit_artifacts(run_experiment(_plan(rng_seed=11)), tmp_path / name, figures=False)
    for f in ("report.json", "runs.csv", "run_000.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seeds_differ(fake_solver):
    a = report_to_dict(run_experiment(_plan(rng_seed=1)))
    b = report_to_dict(run_experiment(_plan(rng_seed=2)))
    assert a["records"][0]["goal_s1_m"] != b["records"][0]["goal_s1_m"]


def test_ten_run_report(fake_solver, tmp_path):
    emit_artifacts(run_experiment(_plan(runs=10)), tmp_path, figures=False)
    assert sorted(p.name for p in tmp_path.glob("run_*.csv")) == [f"run_{k:03d}.csv" for k in range(10)]
    lines = (tmp_path / "runs.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 11
    assert lines[0].startswith("run,goal_s1_x")
    doc = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert doc["aggregates"] == {"runs": 10, "feasible": 10, "success": 0}
    assert doc["plan"]["rng_seed"] == 0
    timing = json.loads((tmp_path / "timing.json").read_text(encoding="utf-8"))
    assert timing["solve_time_mean_s"] == pytest.approx(0.25)


def test_run_csv_joins_the_subtasks(fake_solver, tmp_path):
    emit_artifacts(run_experiment(_plan(runs=1)), tmp_path, figures=False)
    rows = (tmp_path / "run_000.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 1 + 5 + 4
    assert rows[0].split(",")[0] == "t"


def test_figures_are_written(fake_solver, tmp_path):
    written = emit_artifacts(run_experiment(_plan(runs=1)), tmp_path)
    names = {p.name for p in written}
    assert {"run_000_k1.svg", "run_000_forces.svg"} <= names
    assert (tmp_path / "run_000_k1.svg").read_text(encoding="utf-8").lstrip().startswith("<?xml")


def test_empty_report(tmp_path, scenario1):
    plan = _plan(runs=1)
    report = ExperimentReport(plan, scenario1.name, np.zeros(3), np.zeros(3), ())
    emit_artifacts(report, tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert doc["aggregates"]["runs"] == 0
    assert doc["records"] == []
    assert not list(tmp_path.glob("run_*"))
    assert json.loads((tmp_path / "timing.json").read_text(encoding="utf-8"))["solve_time"] == "n/a"
