"""
experiments/montecarlo.py

Seeded goal-sampling experiments
─────────────────────────────────
Repeats the plan → replay pipeline of one scenario with randomly perturbed
K1 goals and counts feasible trajectories and successful assemblies.

Includes:
    - sample_goal()    : Gaussian perturbation of a K1 goal position
    - run_rng()        : per-run Philox stream split from the master seed
    - run_experiment() : batch driver, optionally parallel over runs

Random numbers come from NumPy's Philox4x64 counter-based generator seeded
with SeedSequence([seed, run_index]); run k draws the S1 goal first, then the
S2 goal.  Only the Cartesian K1 goal is perturbed.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from typing import List, Optional, Sequence, Tuple

import numpy as np

from control.mpcc import SolverOptions, TrajectorySolution, solve_subtask_sequence
from core.errors import BeltOptError, PreconditionError, SimulationBlowUp
from core.params import DESK_HORIZON, DEFAULT_STEP, Scenario, SubtaskSpec, SystemState
from core.scenarios import resolve_scenario, with_horizon
from sim import AssemblyOutcome, simulate_chain

logger = logging.getLogger(__name__)

GOAL_COV = (0.005, 0.005, 0.005)      # Σ diagonal [m²]
THREADS_ENV = "BELTOPT_THREADS"


# ────────────────────────────────────────────────
# ❶ Plan and records
# ────────────────────────────────────────────────

@dataclass(frozen=True)
class ExperimentPlan:
    scenario_id:        str                               # "1".."4" or a scenario file
    runs:               int = 10
    goal_noise_mean_s1: Optional[Tuple[float, float, float]] = None   # None → default S1 goal
    goal_noise_mean_s2: Optional[Tuple[float, float, float]] = None   # None → default S2 goal
    goal_noise_cov:     Tuple[float, float, float] = GOAL_COV
    rng_seed:           int = 0
    horizon_N:          int = DESK_HORIZON
    step_h:             float = DEFAULT_STEP
    simulate:           bool = True
    opts:               SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.runs < 1:
            raise PreconditionError(f"an experiment needs at least one run, got {self.runs}")
        cov = tuple(float(v) for v in self.goal_noise_cov)
        if len(cov) != 3 or not all(v >= 0.0 for v in cov):
            raise PreconditionError(f"goal covariance diagonal must be three nonnegative values: {cov}")
        object.__setattr__(self, "goal_noise_cov", cov)
        for name in ("goal_noise_mean_s1", "goal_noise_mean_s2"):
            mu = getattr(self, name)
            if mu is not None:
                if len(mu) != 3:
                    raise PreconditionError(f"{name} must have three entries")
                object.__setattr__(self, name, tuple(float(v) for v in mu))


@dataclass(frozen=True, eq=False)
class RunRecord:
    index:       int
    goal_s1:     np.ndarray                 # sampled K1 goal of S1 [m]
    goal_s2:     np.ndarray                 # sampled K1 goal of S2 [m]
    status_s1:   str
    status_s2:   str                        # "skipped" when S1 failed
    violation:   float                      # worst of the two subtasks
    cost:        float                      # sum of the two subtasks
    solve_time:  Tuple[float, float]        # wall clock per subtask [s]
    outcome:     Optional[AssemblyOutcome] = None
    error:       Optional[str] = None
    solutions:   Tuple[Optional[TrajectorySolution], ...] = ()
    k1_trace:    Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None   # t, reference, simulated

    @property
    def feasible(self) -> bool:
        return self.status_s1 == "converged" and self.status_s2 == "converged"

    @property
    def success(self) -> bool:
        return self.feasible and self.outcome is not None and self.outcome.success


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    plan:     ExperimentPlan
    scenario: str
    mean_s1:  np.ndarray
    mean_s2:  np.ndarray
    records:  Tuple[RunRecord, ...]

    @property
    def feasible_count(self) -> int:
        return sum(r.feasible for r in self.records)

    @property
    def success_count(self) -> int:
        return sum(r.success for r in self.records)

    def solve_times(self) -> np.ndarray:
        """Per-subtask wall times of all runs that reached the solver."""
        return np.array([t for r in self.records for t in r.solve_time if t > 0.0])

    def timing_summary(self) -> str:
        t = self.solve_times()
        if t.size == 0:
            return "n/a"
        return f"{t.mean():.3f}±{t.std():.3f}[s]"


# ────────────────────────────────────────────────
# ❷ Goal sampling
# ────────────────────────────────────────────────

def run_rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(run_index)])))


def sample_goal(mean: Sequence[float], cov_diag: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """
    One draw from 𝒩(mean, diag(cov_diag)).

    A zero covariance returns *mean* exactly.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov_diag, dtype=float)
    if mean.shape != (3,) or cov.shape != (3,):
        raise PreconditionError("goal mean and covariance diagonal must have three entries")
    if np.any(cov < 0.0):
        raise PreconditionError(f"covariance diagonal must be nonnegative: {cov}")
    return mean + np.sqrt(cov) * rng.standard_normal(3)


def with_k1_goal(spec: SubtaskSpec, k1: Sequence[float]) -> SubtaskSpec:
    """Copy of *spec* whose goal K1 position is *k1*; everything else unchanged."""
    goal = spec.goal_state
    q = replace(goal.q, k1_pos=tuple(float(v) for v in k1))
    return replace(spec, goal_state=SystemState(q, goal.qdot))


# ────────────────────────────────────────────────
# ❸ One run
# ────────────────────────────────────────────────

def _run_one(args) -> RunRecord:
    plan, scenario, index, mu1, mu2 = args
    rng = run_rng(plan.rng_seed, index)
    g1 = sample_goal(mu1, plan.goal_noise_cov, rng)
    g2 = sample_goal(mu2, plan.goal_noise_cov, rng)
    specs = (with_k1_goal(scenario.subtask_s1, g1), with_k1_goal(scenario.subtask_s2, g2))

    try:
        sol1, sol2 = solve_subtask_sequence(scenario, specs, plan.opts)
    except BeltOptError as exc:
        logger.warning("run %d: solver raised %s", index, exc)
        return RunRecord(index, g1, g2, "error", "skipped", float("nan"), float("nan"),
                         (0.0, 0.0), error=f"{type(exc).__name__}: {exc}")

    status2 = "skipped" if sol2 is None else sol2.status
    sols = (sol1,) if sol2 is None else (sol1, sol2)
    record = RunRecord(
        index, g1, g2, sol1.status, status2,
        violation=max(s.max_violation for s in sols),
        cost=sum(s.cost for s in sols),
        solve_time=(sol1.wall_time, 0.0 if sol2 is None else sol2.wall_time),
        solutions=sols,
    )
    if not (record.feasible and plan.simulate):
        return record

    try:
        trace, outcome = simulate_chain(sols, scenario)
    except SimulationBlowUp as exc:
        logger.warning("run %d: %s", index, exc)
        return replace(record, error=f"SimulationBlowUp: {exc}")
    k1 = (trace.t, trace.grip_reference, trace.positions[:, 0, :])
    return replace(record, outcome=outcome, k1_trace=k1)


def _guarded(args) -> RunRecord:
    """Any unexpected failure becomes a record; a batch never aborts."""
    plan, _, index, mu1, mu2 = args
    try:
        return _run_one(args)
    except Exception as exc:      # noqa: BLE001
        logger.exception("run %d failed", index)
        nan = np.full(3, np.nan)
        return RunRecord(index, nan, nan, "error", "skipped", float("nan"), float("nan"),
                         (0.0, 0.0), error=f"{type(exc).__name__}: {exc}")


# ────────────────────────────────────────────────
# ❹ Batch driver
# ────────────────────────────────────────────────

def worker_count(runs: int) -> int:
    try:
        n = int(os.environ.get(THREADS_ENV, "1"))
    except ValueError:
        n = 1
    return max(1, min(n, runs))


def run_experiment(plan: ExperimentPlan, scenario: Optional[Scenario] = None) -> ExperimentReport:
    """
    Run *plan.runs* goal-sampled plan → replay pipelines.

    Parameters:
        plan : ExperimentPlan
            Scenario reference, run count, goal distribution and seed.
        scenario : Scenario, optional
            Use this scenario instead of resolving plan.scenario_id.

    Returns:
        ExperimentReport with records ordered by run index.  The outcome of a
        run depends only on (plan, run index), so the worker count never
        changes the report.
    """
    base = scenario if scenario is not None else resolve_scenario(plan.scenario_id)
    base = with_horizon(base, plan.horizon_N, plan.step_h)
    mu1 = np.asarray(plan.goal_noise_mean_s1 if plan.goal_noise_mean_s1 is not None
                     else base.subtask_s1.goal_state.k1, dtype=float)
    mu2 = np.asarray(plan.goal_noise_mean_s2 if plan.goal_noise_mean_s2 is not None
                     else base.subtask_s2.goal_state.k1, dtype=float)

    tasks = [(plan, base, k, mu1, mu2) for k in range(plan.runs)]
    workers = worker_count(plan.runs)
    logger.info("%s: %d runs, seed %d, %d worker(s)", base.name, plan.runs, plan.rng_seed, workers)
    t0 = time.perf_counter()
    if workers == 1:
        records: List[RunRecord] = [_guarded(t) for t in tasks]
    else:
        with Pool(workers) as p:
            records = p.map(_guarded, tasks)
    records.sort(key=lambda r: r.index)

    for r in records:
        logger.info("run %d: S1 %s, S2 %s, success=%s", r.index, r.status_s1, r.status_s2, r.success)
    report = ExperimentReport(plan, base.name, mu1, mu2, tuple(records))
    logger.info("%s: feasible %d/%d, success %d/%d, solve time %s (batch %.1f s)",
                base.name, report.feasible_count, plan.runs, report.success_count, plan.runs,
                report.timing_summary(), time.perf_counter() - t0)
    return report
