"""
control/mpcc.py
───────────────
Relaxation homotopy for the transcribed MPCC.

The complementarity products are relaxed to  λ̄·s ≤ σ  and a decreasing
sequence σ = 1e-1, 1e-2, …, 1e-5 of smooth NLPs is solved, each stage
warm-started with the iterate, multipliers and penalty of the previous one.
Every stage is solved by the augmented-Lagrangian method of control.auglag,
or by Ipopt through CasADi when SolverOptions.backend == "ipopt".

Usage
-----
    nlp  = transcribe(sc, sc.subtask_s1, sc.initial_state)
    sol  = solve(nlp, cold_start_guess(nlp), SolverOptions())
    s1, s2 = solve_subtask_sequence(sc)
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from control.auglag import StageResult, projected_gradient, solve_stage, variable_scaling
from control.builder import DecisionLayout, TranscribedNLP, transcribe
from control.nlp import NLPProblem
from core.errors import LayoutError, PreconditionError, SingularityError
from core.params import Scenario, SubtaskSpec, SystemState

logger = logging.getLogger(__name__)

Status = Literal["converged", "max-iter", "singular", "infeasible-stage"]


# --------------------------------------------------------------------------- #
# 1.  Options and results                                                     #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SolverOptions:
    sigma_schedule:   Tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    constraint_tol:   float = 1e-4
    optimality_tol:   float = 1e-4
    max_outer_iters:  int = 50          # per stage
    max_inner_iters:  int = 500         # per outer iteration
    penalty_growth:   float = 10.0
    initial_penalty:  float = 10.0
    wall_time_budget: float = 300.0     # per subtask [s]
    backend:          Literal["auglag", "ipopt"] = "auglag"

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigma_schedule)
        object.__setattr__(self, "sigma_schedule", s)
        if not s or any(v <= 0.0 for v in s) or any(b >= a for a, b in zip(s, s[1:])):
            raise PreconditionError(f"σ schedule must be positive and strictly decreasing: {s}")
        if not (self.constraint_tol > 0.0 and self.optimality_tol > 0.0):
            raise PreconditionError("tolerances must be positive")
        if not self.penalty_growth > 1.0 or not self.initial_penalty > 0.0:
            raise PreconditionError("penalty growth must exceed 1 and the initial penalty be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1 or not self.wall_time_budget > 0.0:
            raise PreconditionError("iteration and time budgets must be positive")
        if self.backend not in ("auglag", "ipopt"):
            raise PreconditionError(f"unknown backend '{self.backend}'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_schedule"] = list(self.sigma_schedule)
        return d


@dataclass(frozen=True)
class StageDiagnostics:
    sigma:            float
    status:           str
    violation:        float
    cost:             float
    stationarity:     float
    outer_iterations: int
    inner_iterations: int
    penalty:          float
    wall_time:        float


@dataclass(frozen=True, eq=False)
class HomotopyResult:
    z:           np.ndarray
    status:      Status
    stages:      Tuple[StageDiagnostics, ...]
    multipliers: np.ndarray
    penalty:     float
    sigma:       float


@dataclass(frozen=True, eq=False)
class TrajectorySolution:
    states:           np.ndarray                  # (N+1)×18
    inputs:           np.ndarray                  # (N+1)×6
    force_magnitudes: np.ndarray                  # (N+1)×2
    status:           Status
    diagnostics:      Tuple[StageDiagnostics, ...] = ()
    subtask_id:       str = "S1"
    step_h:           float = 0.05
    sigma:            float = 0.0                 # last relaxation used
    multipliers:      Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    penalty:          float = 0.0

    @property
    def horizon_N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.step_h * np.arange(self.horizon_N + 1)

    @property
    def final_state(self) -> SystemState:
        return SystemState.from_vector(self.states[-1])

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def max_violation(self) -> float:
        return self.diagnostics[-1].violation if self.diagnostics else float("nan")

    @property
    def cost(self) -> float:
        return self.diagnostics[-1].cost if self.diagnostics else float("nan")

    @property
    def wall_time(self) -> float:
        return float(sum(d.wall_time for d in self.diagnostics))

    def flatten(self) -> np.ndarray:
        return DecisionLayout(self.horizon_N).flatten(self.states, self.inputs, self.force_magnitudes)


# --------------------------------------------------------------------------- #
# 2.  Initial guesses                                                         #
# --------------------------------------------------------------------------- #
def cold_start_guess(nlp: TranscribedNLP, x_init: Optional[SystemState] = None) -> np.ndarray:
    """
    Every knot state at x_init, K1's weight held by F_z = m1·g, forces zero.
    """
    x0 = (nlp.x_init if x_init is None else x_init).vector
    K = nlp.layout.knots
    u_gc = np.zeros(6)
    u_gc[2] = nlp.scenario.belt.m1 * nlp.scenario.belt.gravity_g
    return nlp.layout.flatten(np.tile(x0, (K, 1)), np.tile(u_gc, (K, 1)), np.zeros((K, 2)))


def warm_start(previous: TrajectorySolution, nlp: TranscribedNLP) -> np.ndarray:
    """Flatten *previous* as the start point of *nlp*; layouts must agree."""
    if previous.horizon_N != nlp.layout.N:
        raise LayoutError(f"solution has N = {previous.horizon_N}, NLP has N = {nlp.layout.N}")
    return previous.flatten()


# --------------------------------------------------------------------------- #
# 3.  Homotopy                                                                #
# --------------------------------------------------------------------------- #
def _ipopt_stage(nlp: NLPProblem, z0: np.ndarray, opts: SolverOptions, lam0: np.ndarray) -> StageResult:
    t0 = time.perf_counter()
    solver = nlp.ipopt_solver({
        "ipopt.tol": opts.optimality_tol,
        "ipopt.constr_viol_tol": opts.constraint_tol,
        "ipopt.max_iter": opts.max_outer_iters * opts.max_inner_iters,
        "ipopt.max_wall_time": opts.wall_time_budget,
    })
    sol = solver(x0=z0, lbx=nlp.lbx, ubx=nlp.ubx, lbg=nlp.lbg, ubg=nlp.ubg, lam_g0=lam0)
    stats = solver.stats()
    z = np.clip(np.asarray(sol["x"].full()).ravel(), nlp.lbx, nlp.ubx)
    ev = nlp.evaluate(z)
    viol = nlp.max_violation(ev.g)
    ok = bool(stats.get("success", False)) and viol <= opts.constraint_tol
    status = "converged" if ok else (
        "infeasible-stage" if "Infeasible" in str(stats.get("return_status", "")) else "max-iter")
    return StageResult(
        z=z, multipliers=np.asarray(sol["lam_g"].full()).ravel(), penalty=0.0,
        status=status, violation=viol, cost=ev.f, stationarity=float("nan"),
        outer_iterations=1, inner_iterations=int(stats.get("iter_count", 0)),
        wall_time=time.perf_counter() - t0,
    )


def homotopy(nlp: NLPProblem, z0: np.ndarray, opts: SolverOptions) -> HomotopyResult:
    """
    Run the σ schedule on any NLPProblem; a problem without complementarity
    rows is solved in a single stage.
    """
    z = np.asarray(z0, dtype=float).ravel()
    if z.size != nlp.n:
        raise PreconditionError(f"initial guess has {z.size} entries, NLP has {nlp.n} variables")
    schedule = opts.sigma_schedule if nlp.complementarity_rows.size else opts.sigma_schedule[-1:]
    deadline = time.perf_counter() + opts.wall_time_budget

    lam = np.zeros(nlp.m)
    rho = opts.initial_penalty
    stages = []
    status: Status = "converged"
    sigma = schedule[0]
    for sigma in schedule:
        nlp.set_sigma(sigma)
        try:
            if opts.backend == "ipopt":
                st = _ipopt_stage(nlp, z, opts, lam)
            else:
                st = solve_stage(
                    nlp, z, multipliers=lam, penalty=rho,
                    constraint_tol=opts.constraint_tol, optimality_tol=opts.optimality_tol,
                    max_outer_iters=opts.max_outer_iters, max_inner_iters=opts.max_inner_iters,
                    penalty_growth=opts.penalty_growth, deadline=deadline,
                )
        except SingularityError as exc:
            logger.warning("σ = %.0e: %s", sigma, exc)
            status = "singular"
            break

        stages.append(StageDiagnostics(
            sigma=sigma, status=st.status, violation=st.violation, cost=st.cost,
            stationarity=st.stationarity, outer_iterations=st.outer_iterations,
            inner_iterations=st.inner_iterations, penalty=st.penalty, wall_time=st.wall_time,
        ))
        logger.info("σ = %.0e  %-16s viol=%.2e  cost=%.6g  outer=%d  inner=%d  %.2fs",
                    sigma, st.status, st.violation, st.cost,
                    st.outer_iterations, st.inner_iterations, st.wall_time)
        z, lam, rho = st.z, st.multipliers, max(st.penalty, opts.initial_penalty)
        if st.status != "converged":
            status = st.status
            break

    return HomotopyResult(z=z, status=status, stages=tuple(stages),
                          multipliers=lam, penalty=rho, sigma=sigma)


def solve(nlp: TranscribedNLP, initial_guess: np.ndarray, opts: Optional[SolverOptions] = None) -> TrajectorySolution:
    """
    Solve one transcribed subtask by the σ homotopy.

    Returns the last iterate with status converged, max-iter, singular or
    infeasible-stage; identical inputs give identical iterates.
    """
    opts = opts or SolverOptions()
    res = homotopy(nlp, initial_guess, opts)
    X, U, L = nlp.layout.unflatten(res.z)
    return TrajectorySolution(
        states=X, inputs=U, force_magnitudes=L, status=res.status,
        diagnostics=res.stages, subtask_id=nlp.spec.id, step_h=nlp.spec.step_h,
        sigma=res.sigma, multipliers=res.multipliers, penalty=res.penalty,
    )


def solve_subtask_sequence(
    scenario: Scenario,
    specs: Optional[Tuple[SubtaskSpec, SubtaskSpec]] = None,
    opts: Optional[SolverOptions] = None,
) -> Tuple[TrajectorySolution, Optional[TrajectorySolution]]:
    """
    Solve S1 from the scenario's initial state, then S2 from the final state
    of S1.  S2 is skipped (None) when S1 does not converge.
    """
    opts = opts or SolverOptions()
    s1_spec, s2_spec = specs or (scenario.subtask_s1, scenario.subtask_s2)

    logger.info("%s: solving S1 (N=%d)", scenario.name, s1_spec.horizon_N)
    nlp1 = transcribe(scenario, s1_spec, scenario.initial_state, sigma=opts.sigma_schedule[0])
    sol1 = solve(nlp1, cold_start_guess(nlp1), opts)
    if not sol1.converged:
        logger.warning("%s: S1 failed with status %s; S2 not attempted", scenario.name, sol1.status)
        return sol1, None

    x_mid = sol1.final_state
    logger.info("%s: solving S2 (N=%d)", scenario.name, s2_spec.horizon_N)
    nlp2 = transcribe(scenario, s2_spec, x_mid, sigma=opts.sigma_schedule[0])
    sol2 = solve(nlp2, cold_start_guess(nlp2), opts)
    if not sol2.converged:
        logger.warning("%s: S2 failed with status %s", scenario.name, sol2.status)
    return sol1, sol2


# --------------------------------------------------------------------------- #
# 4.  Residual summary                                                        #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class KKTReport:
    stationarity:     float                       # ‖projected ∇Φ‖∞
    block_violation:  Dict[str, float]
    elastic_products: np.ndarray                  # λ̄0·λ2 per knot
    contact_products: np.ndarray                  # λ̄1·(λ3 − ε) per knot
    max_violation:    float
    elastic_pairs:    np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (λ2, λ̄0)
    contact_pairs:    np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (λ3 − ε, λ̄1)

    @property
    def empty(self) -> bool:
        return not self.block_violation and self.elastic_products.size == 0


def _triples(nlp: NLPProblem, g: np.ndarray, name: str) -> np.ndarray:
    """Rows of a complementarity block as (gap, force, product) per knot."""
    try:
        b = nlp.block(name)
    except KeyError:
        return np.zeros((0, 3))
    return g[b.start:b.stop].reshape(-1, 3).copy()


def kkt_report(
    nlp: NLPProblem,
    z: np.ndarray,
    multipliers: Optional[np.ndarray] = None,
    penalty: float = 10.0,
) -> KKTReport:
    """
    Stationarity of the augmented Lagrangian (projected onto the box),
    primal violation per block and complementarity products per knot.
    """
    if nlp.n == 0:
        return KKTReport(0.0, {}, np.zeros(0), np.zeros(0), 0.0)
    ev = nlp.evaluate(z)
    f_scale, g_scale = nlp.scaling if nlp.scaling is not None else (1.0, np.ones(nlp.m))
    lam = np.zeros(nlp.m) if multipliers is None else np.asarray(multipliers, dtype=float)

    gs = g_scale * ev.g
    s = np.clip(gs - lam / penalty, g_scale * nlp.lbg, g_scale * nlp.ubg)
    r = gs - s
    grad = f_scale * ev.grad + ev.jac.T @ (g_scale * (penalty * r - lam))
    _, half = variable_scaling(nlp.lbx, nlp.ubx)
    zc = np.asarray(z, dtype=float)
    stat = projected_gradient(zc / half, half * grad, nlp.lbx / half, nlp.ubx / half)

    elastic, contact = _triples(nlp, ev.g, "elastic"), _triples(nlp, ev.g, "contact")
    return KKTReport(
        stationarity=float(np.max(np.abs(stat))),
        block_violation=nlp.block_violation(ev.g),
        elastic_products=elastic[:, 2],
        contact_products=contact[:, 2],
        max_violation=nlp.max_violation(ev.g),
        elastic_pairs=elastic[:, 0:2],
        contact_pairs=contact[:, 0:2],
    )
