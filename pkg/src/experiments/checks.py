"""
experiments/checks.py

Fast self-tests behind `beltopt check`: analytic oracles of the plants,
derivative oracles of the dynamics and the transcription, a toy QP through the
augmented-Lagrangian solver, the scenario file round trip and the sampling
contract.  Each check takes well under a minute.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import casadi as ca
import numpy as np

from control.auglag import solve_stage
from control.builder import transcribe
from control.mpcc import cold_start_guess
from control.nlp import NLPProblem
from core.dynamics import ForceContext, vector_field
from core.linearise import dynamics_jacobians, finite_difference_jacobian
from core.params import SystemState
from core.scenarios import builtin_scenarios, load_scenario, save_scenario, scenario_to_dict, with_horizon
from experiments.montecarlo import run_rng, sample_goal
from sim.simulate import TrackingGains, K1Reference, integrate_reduced, track_k1

logger = logging.getLogger(__name__)

JACOBIAN_RTOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name:   str
    passed: bool
    detail: str


def _relative_error(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.max(np.abs(A - B)) / max(1.0, float(np.max(np.abs(B)))))


# ── plants ──────────────────────────────────────────────────────────────────
def check_free_fall() -> CheckResult:
    sc = builtin_scenarios()[0]
    g = sc.belt.gravity_g
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.1, 1.0)).vector
    ctx = ForceContext("S1", sc.pulley1)
    tr = integrate_reduced(x0, lambda t: np.zeros(6), 1.0, 1e-3, sc.belt, ctx)
    err = float(np.max(np.abs(tr.states[:, 2] - (1.0 - 0.5 * g * tr.t ** 2))))
    return CheckResult("free fall", err <= 1e-6, f"max |z − z0 + ½gt²| = {err:.2e} m")


def check_hanging_equilibrium() -> CheckResult:
    sc = builtin_scenarios()[0]
    belt = sc.belt
    L = belt.rest_length_L
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 1.0 - L)).vector
    ctx = ForceContext("S1", sc.pulley1)
    tr = integrate_reduced(x0, lambda t: np.zeros(6), 4.0, 1e-3, belt, ctx, fix_k1=True)
    ext = float(1.0 - tr.states[-1, 5] - L)
    expected = belt.m2 * belt.gravity_g / belt.k_p
    return CheckResult("hanging equilibrium", abs(ext - expected) <= 1e-4,
                       f"extension {ext:.6f} m, m2·g/k_p = {expected:.6f} m")


def check_tracking_law() -> CheckResult:
    ref = K1Reference.hold((0.0, 0.0, 1.0))
    ctrl = track_k1(ref, TrackingGains(kp=200.0, kd=1.0), mass=0.042)
    u0 = ctrl(0.0, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0))
    u1 = ctrl(0.0, (0.0, 0.0, 0.99), (0.0, 0.0, 0.0))
    extra = float(u1[2] - u0[2])
    ok = abs(u0[2] - 0.042 * 9.81) < 1e-12 and abs(extra - 2.0) < 1e-9
    return CheckResult("tracking law", ok, f"feedforward {u0[2]:.4f} N, step response {extra:.4f} N")


# ── derivatives ─────────────────────────────────────────────────────────────
def check_dynamics_jacobians(points: int = 100, seed: int = 0) -> CheckResult:
    sc = builtin_scenarios()[0]
    rng = run_rng(seed, 0)
    worst = 0.0
    for i in range(points):
        ctx = ForceContext("S1" if i % 2 == 0 else "S2", sc.pulley1)
        x = np.concatenate([
            sc.pulley1.O + rng.uniform(-0.2, 0.2, 3) + np.array([0.0, 0.0, 0.15]),
            sc.pulley1.O + rng.uniform(-0.2, 0.2, 3) - np.array([0.0, 0.0, 0.15]),
            rng.uniform(-1.0, 1.0, 3),
            rng.uniform(-0.5, 0.5, 9),
        ])
        u = rng.uniform(-1.0, 1.0, 6)
        lam = rng.uniform(0.0, 5.0, 2)
        Jx, Ju, Jl = dynamics_jacobians(x, u, lam, sc.belt, ctx)
        worst = max(
            worst,
            _relative_error(Jx, finite_difference_jacobian(lambda v: vector_field(v, u, lam, sc.belt, ctx), x)),
            _relative_error(Ju, finite_difference_jacobian(lambda v: vector_field(x, v, lam, sc.belt, ctx), u)),
            _relative_error(Jl, finite_difference_jacobian(lambda v: vector_field(x, u, v, sc.belt, ctx), lam)),
        )
    return CheckResult("dynamics Jacobians", worst <= JACOBIAN_RTOL,
                       f"worst relative error {worst:.2e} over {points} points")


def check_nlp_jacobian(points: int = 3, seed: int = 0) -> CheckResult:
    sc = with_horizon(builtin_scenarios()[0], 4)
    nlp = transcribe(sc, sc.subtask_s1, sc.initial_state)
    z0 = cold_start_guess(nlp)
    rng = run_rng(seed, 1)
    worst = 0.0
    for _ in range(points):
        z = np.clip(z0 + rng.normal(0.0, 0.01, nlp.n), nlp.lbx, nlp.ubx)
        ev = nlp.evaluate(z)
        J_fd = finite_difference_jacobian(nlp.constraints, z)
        g_fd = finite_difference_jacobian(nlp.objective, z).ravel()
        worst = max(worst, _relative_error(ev.jac.toarray(), J_fd), _relative_error(ev.grad, g_fd))
    return CheckResult("NLP derivatives", worst <= JACOBIAN_RTOL,
                       f"worst relative error {worst:.2e} ({nlp.n} variables, {nlp.m} rows)")


# ── solver ──────────────────────────────────────────────────────────────────
def check_toy_qp() -> CheckResult:
    """min (z0 − 1)² + (z1 − 2)²  s.t.  z0 + z1 ≤ 1   →   z* = (0, 1)."""
    z = ca.SX.sym("z", 2)
    f = (z[0] - 1.0) ** 2 + (z[1] - 2.0) ** 2
    nlp = NLPProblem.from_casadi(z, f, z[0] + z[1], [-10.0, -10.0], [10.0, 10.0], [-np.inf], [1.0])
    res = solve_stage(nlp, np.zeros(2), constraint_tol=1e-8, optimality_tol=1e-8)
    err = float(np.max(np.abs(res.z - np.array([0.0, 1.0]))))
    return CheckResult("toy QP", res.status == "converged" and err <= 1e-6,
                       f"status {res.status}, |z − z*| = {err:.2e}")


# ── files and sampling ──────────────────────────────────────────────────────
def check_scenario_round_trip() -> CheckResult:
    with tempfile.TemporaryDirectory() as tmp:
        bad = []
        for sc in builtin_scenarios():
            path = save_scenario(sc, Path(tmp) / f"{sc.name}.json")
            if scenario_to_dict(load_scenario(path)) != scenario_to_dict(sc):
                bad.append(sc.name)
    return CheckResult("scenario round trip", not bad, "all four scenarios" if not bad else f"differs: {bad}")


def check_sampling() -> CheckResult:
    mean = np.array([0.1, 0.55, 0.53])
    same = np.array_equal(sample_goal(mean, (0.0, 0.0, 0.0), run_rng(7, 0)), mean)
    a = sample_goal(mean, (0.005,) * 3, run_rng(42, 3))
    b = sample_goal(mean, (0.005,) * 3, run_rng(42, 3))
    return CheckResult("goal sampling", same and np.array_equal(a, b), "zero covariance and seeded repeat")


CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "free-fall": check_free_fall,
    "hanging": check_hanging_equilibrium,
    "tracking": check_tracking_law,
    "dynamics-jacobian": check_dynamics_jacobians,
    "nlp-jacobian": check_nlp_jacobian,
    "toy-qp": check_toy_qp,
    "round-trip": check_scenario_round_trip,
    "sampling": check_sampling,
}


def run_checks(names: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """Run the named checks (all by default); an exception counts as a failure."""
    results = []
    for name in names or list(CHECKS):
        try:
            r = CHECKS[name]()
        except Exception as exc:      # noqa: BLE001
            logger.exception("check %s raised", name)
            r = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        logger.info("%-20s %s  %s", r.name, "ok" if r.passed else "FAILED", r.detail)
        results.append(r)
    return results
