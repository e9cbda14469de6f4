"""
control/auglag.py
─────────────────
Augmented-Lagrangian solver for one smooth stage of the homotopy

    min f(z)   s.t.   lbg ≤ g(z) ≤ ubg ,   lbx ≤ z ≤ ubx

Inequalities get slacks s ∈ [lbg, ubg]; for fixed z the slacks minimise the
augmented Lagrangian in closed form, so only z is left to the inner solver:

    s = clip(g − λ/ρ, lbg, ubg),    r = g − s
    Φ(z) = f − λᵀ r + ρ/2 ‖r‖²
    ∇Φ   = ∇f + Jᵀ (−λ + ρ r)

Inner iterations: SciPy L-BFGS-B on the bound-scaled variables y ∈ [−1, 1].
Outer iterations: first-order multiplier update λ ← λ − ρ r, penalty growth
when the violation does not drop by a factor 0.25 or the cost stalls.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from control.nlp import NLPProblem
from core.errors import SingularityError

logger = logging.getLogger(__name__)

MAX_PENALTY = 1e8
STALL_RTOL = 1e-10
VIOLATION_DECREASE = 0.25
SCALE_TARGET = 100.0          # largest scaled gradient entry per row


@dataclass(frozen=True, eq=False)
class StageResult:
    z:                np.ndarray
    multipliers:      np.ndarray
    penalty:          float
    status:           str           # converged | max-iter | infeasible-stage
    violation:        float         # unscaled max constraint violation
    cost:             float
    stationarity:     float
    outer_iterations: int
    inner_iterations: int
    wall_time:        float


class _DeadlineReached(Exception):
    pass


# --------------------------------------------------------------------------- #
# 1.  Variable and row scaling                                                #
# --------------------------------------------------------------------------- #
def variable_scaling(lbx: np.ndarray, ubx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centre and half-range mapping finite boxes to [−1, 1]; identity elsewhere."""
    finite = np.isfinite(lbx) & np.isfinite(ubx) & (ubx > lbx)
    centre = np.where(finite, 0.5 * (lbx + ubx), 0.0)
    half = np.where(finite, 0.5 * (ubx - lbx), 1.0)
    return centre, half


def gradient_scaling(nlp: NLPProblem, z: np.ndarray, half: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Objective and row factors min(1, 100 / max |∂·/∂y|) at *z*.

    Computed once per NLP and cached on it, so every stage of a homotopy
    minimises the same scaled problem.
    """
    if nlp.scaling is not None:
        return nlp.scaling
    ev = nlp.evaluate(z)
    gmax = np.max(np.abs(ev.grad * half)) if nlp.n else 0.0
    f_scale = min(1.0, SCALE_TARGET / gmax) if gmax > 0.0 else 1.0
    J = ev.jac.multiply(half[np.newaxis, :]).tocsr()
    row_max = np.zeros(nlp.m)
    if J.nnz:
        row_max = np.asarray(abs(J).max(axis=1).todense()).ravel()
    g_scale = np.where(row_max > 0.0, np.minimum(1.0, SCALE_TARGET / np.where(row_max > 0.0, row_max, 1.0)), 1.0)
    nlp.scaling = (float(f_scale), g_scale)
    return nlp.scaling


def projected_gradient(y: np.ndarray, grad: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return y - np.clip(y - grad, lo, hi)


# --------------------------------------------------------------------------- #
# 2.  Stage solver                                                            #
# --------------------------------------------------------------------------- #
def solve_stage(
    nlp: NLPProblem,
    z0: np.ndarray,
    *,
    multipliers: Optional[np.ndarray] = None,
    penalty: float = 10.0,
    constraint_tol: float = 1e-4,
    optimality_tol: float = 1e-4,
    max_outer_iters: int = 50,
    max_inner_iters: int = 500,
    penalty_growth: float = 10.0,
    deadline: Optional[float] = None,
) -> StageResult:
    """
    Solve the current smooth NLP (σ fixed) from *z0*.

    Parameters
    ----------
    nlp : NLPProblem
    z0 : ndarray (n,)
        Start point; projected onto the variable box.
    multipliers : ndarray (m,), optional
        Warm-start multipliers of the scaled rows (zeros by default).
    penalty : float
        Initial penalty ρ.
    deadline : float, optional
        time.perf_counter() value after which the stage stops with max-iter.

    Returns
    -------
    StageResult

    Raises
    ------
    SingularityError
        If f, g or a derivative becomes non-finite.
    """
    t_start = time.perf_counter()
    centre, half = variable_scaling(nlp.lbx, nlp.ubx)
    y_lo = np.where(np.isfinite(nlp.lbx), (nlp.lbx - centre) / half, -np.inf)
    y_hi = np.where(np.isfinite(nlp.ubx), (nlp.ubx - centre) / half, np.inf)
    z0 = np.clip(np.asarray(z0, dtype=float), nlp.lbx, nlp.ubx)
    y = np.clip((z0 - centre) / half, y_lo, y_hi)

    f_scale, g_scale = gradient_scaling(nlp, z0, half)
    lbg_s, ubg_s = g_scale * nlp.lbg, g_scale * nlp.ubg
    lam = np.zeros(nlp.m) if multipliers is None else np.asarray(multipliers, dtype=float).copy()
    rho = float(penalty)
    bounds = list(zip(y_lo, y_hi))

    def to_z(yv: np.ndarray) -> np.ndarray:
        return np.clip(centre + half * yv, nlp.lbx, nlp.ubx)

    def merit(yv: np.ndarray) -> Tuple[float, np.ndarray]:
        if deadline is not None and time.perf_counter() > deadline:
            raise _DeadlineReached
        ev = nlp.evaluate(to_z(yv))
        gs = g_scale * ev.g
        s = np.clip(gs - lam / rho, lbg_s, ubg_s)
        r = gs - s
        phi = f_scale * ev.f - lam @ r + 0.5 * rho * (r @ r)
        grad_z = f_scale * ev.grad + ev.jac.T @ (g_scale * (rho * r - lam))
        if not np.isfinite(phi):
            raise SingularityError("non-finite augmented Lagrangian")
        return float(phi), half * grad_z

    status = "max-iter"
    inner_total = 0
    outer = 0
    prev_viol = np.inf
    prev_cost: Optional[float] = None
    viol = np.inf
    cost = np.nan
    stat = np.inf

    for outer in range(1, max_outer_iters + 1):
        try:
            res = minimize(
                merit, y, jac=True, method="L-BFGS-B", bounds=bounds,
                options=dict(maxiter=max_inner_iters, maxcor=20,
                             ftol=np.finfo(float).eps, gtol=0.1 * optimality_tol),
            )
            y = np.clip(res.x, y_lo, y_hi)
            inner_total += int(res.nit)
        except _DeadlineReached:
            logger.warning("stage stopped at the wall-time budget after %d outer iterations", outer - 1)
            break

        z = to_z(y)
        ev = nlp.evaluate(z)
        gs = g_scale * ev.g
        s = np.clip(gs - lam / rho, lbg_s, ubg_s)
        r = gs - s
        viol = nlp.max_violation(ev.g)
        cost = ev.f
        scaled_viol = float(np.max(np.abs(np.maximum(np.maximum(lbg_s - gs, gs - ubg_s), 0.0)))) if nlp.m else 0.0

        # stationarity of the Lagrangian after the multiplier step
        lam_next = lam - rho * r
        grad_y = half * (f_scale * ev.grad - ev.jac.T @ (g_scale * lam_next))
        stat = float(np.max(np.abs(projected_gradient(y, grad_y, y_lo, y_hi)))) if nlp.n else 0.0
        stat_ref = max(1.0, float(np.max(np.abs(half * f_scale * ev.grad))) if nlp.n else 1.0)

        logger.debug("outer %3d  f=%.6e  viol=%.3e  stat=%.3e  rho=%.1e  inner=%d",
                     outer, cost, viol, stat, rho, res.nit)

        if viol <= constraint_tol and stat <= optimality_tol * stat_ref:
            status = "converged"
            lam = lam_next
            break

        lam = lam_next
        if scaled_viol > VIOLATION_DECREASE * prev_viol:
            rho *= penalty_growth
        stalled = (prev_cost is not None
                   and abs(cost - prev_cost) <= STALL_RTOL * max(1.0, abs(prev_cost))
                   and viol > constraint_tol)
        if stalled:
            rho *= penalty_growth
        if rho > MAX_PENALTY:
            status = "infeasible-stage"
            logger.warning("penalty exceeded %.0e with violation %.3e", MAX_PENALTY, viol)
            break
        prev_viol, prev_cost = scaled_viol, cost
        if deadline is not None and time.perf_counter() > deadline:
            logger.warning("stage stopped at the wall-time budget after %d outer iterations", outer)
            break

    z = to_z(y)
    if not np.isfinite(cost):
        ev = nlp.evaluate(z)
        cost, viol = ev.f, nlp.max_violation(ev.g)
    return StageResult(
        z=z, multipliers=lam, penalty=rho, status=status, violation=float(viol),
        cost=float(cost), stationarity=float(stat), outer_iterations=outer,
        inner_iterations=inner_total, wall_time=time.perf_counter() - t_start,
    )
