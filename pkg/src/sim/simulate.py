"""
sim/simulate.py

Reduced two-keypoint plant and the K1 tracking law.

The reduced plant integrates the same vector field the optimiser uses, but
the force magnitudes come from explicit constitutive laws instead of
complementarity:

    λ̄0 = k_p · max(0, l(x) − L)                       stretch-only cable
    λ̄1 = max(0, k_c · pen − c_c · ρ̇)                  one-sided rim penalty

where pen = r1 − ρ is the depth of K2 inside the groove circle of P1 (only
while K2 is within the pulley width) and ρ̇ the radial speed.

Controller API
--------------
A tracking controller is ANY callable:      u = ctrl(t, pos, vel, rpy, rates)
returning the 6-vector [F, M] applied to the grasped keypoint.  track_k1
builds the PD law used by both plants.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from numba import njit

from control.mpcc import TrajectorySolution
from core.discretise import rk4_step
from core.dynamics import ForceContext, cable_length, projection, system_matrices
from core.errors import PreconditionError, SimulationBlowUp
from core.params import BeltModel, Scenario, SystemState

logger = logging.getLogger(__name__)

CONTACT_STIFFNESS = 1e4     # k_c [N/m]
CONTACT_DAMPING = 10.0      # c_c [N·s/m]
BLOW_UP_LIMIT = 1e3         # any |state| above this aborts
MAX_SUBSTEP = 2e-3          # [s]

Hold = Literal["zoh", "foh"]


# ─────────────────────────────────────────────────────────────────────────────
# Constitutive forces
# ─────────────────────────────────────────────────────────────────────────────
def constitutive_forces(
    x: np.ndarray,
    belt: BeltModel,
    ctx: ForceContext,
    k_c: float = CONTACT_STIFFNESS,
    c_c: float = CONTACT_DAMPING,
) -> np.ndarray:
    """[λ̄0, λ̄1] from the spring law and the rim penalty."""
    x = np.asarray(x, dtype=float)
    lam0 = belt.k_p * max(0.0, cable_length(x, ctx) - belt.rest_length_L)

    p1 = ctx.pulley1
    a = np.asarray(p1.axis)
    d = x[3:6] - p1.O
    axial = d @ a
    radial = d - axial * a
    rho = float(np.linalg.norm(radial))
    lam1 = 0.0
    if abs(axial) <= p1.ellipsoid_semi_axes[2] and rho < p1.groove_radius:
        rho_dot = (radial @ x[12:15]) / rho if rho > 1e-12 else 0.0
        lam1 = max(0.0, k_c * (p1.groove_radius - rho) - c_c * rho_dot)
    return np.array([lam0, lam1])


def plant_rhs(
    x: np.ndarray,
    u: np.ndarray,
    belt: BeltModel,
    ctx: ForceContext,
    k_c: float = CONTACT_STIFFNESS,
    c_c: float = CONTACT_DAMPING,
) -> np.ndarray:
    """ẋ of the reduced plant; a projection is only formed when its force is active."""
    A, B, G = system_matrices(belt)
    lam = constitutive_forces(x, belt, ctx, k_c, c_c)
    xdot = A @ x + B @ u + G
    if lam[0] > 0.0:
        pi0 = projection(x[0:3], ctx.elastic_anchor(x))
        xdot[9:12] -= pi0 * lam[0] / belt.m1
        xdot[12:15] += pi0 * lam[0] / belt.m2
    if lam[1] > 0.0:
        xdot[12:15] -= projection(ctx.pulley1.O, x[3:6]) * lam[1] / belt.m2
    return xdot


# ─────────────────────────────────────────────────────────────────────────────
# Reduced-plant integration
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class ReducedPlantState:
    """A state of the reduced plant together with its constitutive forces."""

    state:  SystemState
    forces: np.ndarray        # [λ̄0, λ̄1] from the closed-form laws


@dataclass(frozen=True, eq=False)
class ReducedTrace:
    t:      np.ndarray        # (K,)
    states: np.ndarray        # (K×18)
    inputs: np.ndarray        # (K×6)
    forces: np.ndarray        # (K×2)

    def at(self, i: int) -> ReducedPlantState:
        return ReducedPlantState(SystemState.from_vector(self.states[i]), self.forces[i].copy())

    @property
    def final(self) -> ReducedPlantState:
        return self.at(-1)


def integrate_reduced(
    x0: np.ndarray,
    input_fn: Callable[[float], np.ndarray],
    duration: float,
    dt: float,
    belt: BeltModel,
    ctx: ForceContext,
    *,
    hold: Hold = "zoh",
    fix_k1: bool = False,
    k_c: float = CONTACT_STIFFNESS,
    c_c: float = CONTACT_DAMPING,
) -> ReducedTrace:
    """
    Fixed-step RK4 of the reduced plant from *x0* for *duration* seconds.

    Parameters
    ----------
    input_fn : callable
        t → u (6,).
    hold : "zoh" or "foh"
        "zoh" samples input_fn once per step and holds it over the RK4
        stages; "foh" samples it at every stage time.
    fix_k1 : bool
        Hold K1 and its orientation in place (rows of q̇ and q̈ for K1 zeroed).

    Raises
    ------
    SimulationBlowUp
        When any state component exceeds BLOW_UP_LIMIT in magnitude.
    """
    if hold not in ("zoh", "foh"):
        raise PreconditionError(f"unknown hold '{hold}'")
    steps = int(round(duration / dt))
    x = np.asarray(x0, dtype=float).copy()
    frozen = np.zeros(18, dtype=bool)
    if fix_k1:
        frozen[[0, 1, 2, 6, 7, 8, 9, 10, 11, 15, 16, 17]] = True
        x[frozen & (np.arange(18) >= 9)] = 0.0

    held = [np.zeros(6)]

    def rhs(t: float, xv: np.ndarray) -> np.ndarray:
        u = held[0] if hold == "zoh" else input_fn(t)
        xdot = plant_rhs(xv, u, belt, ctx, k_c, c_c)
        xdot[frozen] = 0.0
        return xdot

    t_log = np.empty(steps + 1)
    X = np.empty((steps + 1, 18))
    U = np.empty((steps + 1, 6))
    L = np.empty((steps + 1, 2))
    for i in range(steps + 1):
        t = i * dt
        t_log[i], X[i] = t, x
        U[i] = held[0] = np.asarray(input_fn(t), dtype=float)
        L[i] = constitutive_forces(x, belt, ctx, k_c, c_c)
        if i == steps:
            break
        x = rk4_step(t, x, dt, rhs)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOW_UP_LIMIT:
            raise SimulationBlowUp("reduced plant left the admissible range", t + dt)
    return ReducedTrace(t_log, X, U, L)


def input_schedule(solution: TrajectorySolution, hold: Hold = "zoh") -> Callable[[float], np.ndarray]:
    """u(t) from the knot inputs: zero-order hold or linear interpolation."""
    U, h, N = solution.inputs, solution.step_h, solution.horizon_N
    if hold == "zoh":
        def u_of_t(t: float) -> np.ndarray:
            k = min(int(math.floor(t / h + 1e-9)), N)
            return U[k]
    elif hold == "foh":
        times = solution.times

        def u_of_t(t: float) -> np.ndarray:
            return np.array([np.interp(t, times, U[:, j]) for j in range(U.shape[1])])
    else:
        raise PreconditionError(f"unknown hold '{hold}'")
    return u_of_t


def simulate_reduced(
    solution: TrajectorySolution,
    scenario: Scenario,
    ctx: Optional[ForceContext] = None,
    *,
    hold: Hold = "zoh",
    substeps: Optional[int] = None,
) -> ReducedTrace:
    """
    Open-loop replay of a converged solution on the reduced plant.

    The solved inputs are applied from the solution's first knot with a
    zero-order hold (or first-order with hold="foh"), integrated by RK4 with
    at least ten substeps per knot interval and substeps no longer than
    MAX_SUBSTEP.  An explicit *substeps* overrides both.
    """
    if not solution.converged:
        raise PreconditionError(f"solution status is {solution.status}, replay needs converged")
    ctx = ctx or ForceContext(solution.subtask_id, scenario.pulley1)
    h = solution.step_h
    n_sub = substeps or max(10, math.ceil(h / MAX_SUBSTEP))
    trace = integrate_reduced(
        solution.states[0], input_schedule(solution, hold),
        solution.horizon_N * h, h / n_sub, scenario.belt, ctx, hold=hold,
    )
    logger.debug("reduced replay %s: %d steps, terminal K1 error %.3e m",
                 solution.subtask_id, trace.t.size - 1,
                 float(np.linalg.norm(trace.states[-1, 0:3] - solution.states[-1, 0:3])))
    return trace


# ─────────────────────────────────────────────────────────────────────────────
# Tracking controller
# ─────────────────────────────────────────────────────────────────────────────
@njit(cache=True)
def _pd_force(ref_p, ref_v, pos, vel, kp, kd, feedforward, limit):
    """Saturated PD force with a feedforward term, component-wise."""
    out = np.empty(3)
    for i in range(3):
        f = kp * (ref_p[i] - pos[i]) + kd * (ref_v[i] - vel[i]) + feedforward[i]
        out[i] = min(max(f, -limit), limit)
    return out


@njit(cache=True)
def _sample_reference(t, ref_t, ref_p, ref_v):
    """Linear interpolation of a (3×K) position/velocity reference at time t."""
    p = np.empty(3)
    v = np.empty(3)
    for i in range(3):
        p[i] = np.interp(t, ref_t, ref_p[i])
        v[i] = np.interp(t, ref_t, ref_v[i])
    return p, v


@dataclass(frozen=True)
class TrackingGains:
    kp:           float = 5000.0            # [N/m]
    kd:           Optional[float] = None    # [N·s/m]; None → critically damped
    kp_rot:       float = 1e-3              # [N·m/rad]
    kd_rot:       float = 2e-5              # [N·m·s/rad]
    force_limit:  float = 50.0              # [N]
    torque_limit: float = 1.0               # [N·m]

    def __post_init__(self):
        if not (self.kp > 0.0 and self.kp_rot > 0.0 and self.kd_rot > 0.0):
            raise PreconditionError("tracking gains must be positive")
        if self.kd is not None and not self.kd > 0.0:
            raise PreconditionError("tracking gains must be positive")

    def damping(self, mass: float) -> float:
        return self.kd if self.kd is not None else 2.0 * math.sqrt(self.kp * mass)


@dataclass(frozen=True, eq=False)
class K1Reference:
    """Pose trajectory of K1 as arrays of shape (3×K)."""

    times:      np.ndarray
    positions:  np.ndarray
    velocities: np.ndarray
    rpy:        np.ndarray
    rates:      np.ndarray

    @classmethod
    def from_solutions(cls, *solutions: Optional[TrajectorySolution]) -> "K1Reference":
        """Concatenate subtask solutions; each next one starts where the previous ended."""
        t, X = [], []
        offset = 0.0
        for i, sol in enumerate(s for s in solutions if s is not None):
            first = 0 if i == 0 else 1          # shared knot at the seam
            t.append(sol.times[first:] + offset)
            X.append(sol.states[first:])
            offset += sol.horizon_N * sol.step_h
        T, S = np.concatenate(t), np.vstack(X)
        return cls(T, S[:, 0:3].T.copy(), S[:, 9:12].T.copy(), S[:, 6:9].T.copy(), S[:, 15:18].T.copy())

    @classmethod
    def hold(cls, position, rpy=(0.0, 0.0, 0.0), duration: float = 1.0) -> "K1Reference":
        p = np.tile(np.asarray(position, dtype=float).reshape(3, 1), (1, 2))
        r = np.tile(np.asarray(rpy, dtype=float).reshape(3, 1), (1, 2))
        z = np.zeros((3, 2))
        return cls(np.array([0.0, duration]), p, z.copy(), r, z.copy())

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def sample(self, t: float):
        p, v = _sample_reference(t, self.times, self.positions, self.velocities)
        r, w = _sample_reference(t, self.times, self.rpy, self.rates)
        return p, v, r, w


def track_k1(
    reference: K1Reference,
    gains: TrackingGains = TrackingGains(),
    *,
    mass: float = 0.042,
    gravity: float = 9.81,
) -> Callable[..., np.ndarray]:
    """
    PD tracking law for the grasped keypoint.

        F = K_p (p_ref − p) + K_d (v_ref − v) + m g ẑ      saturated at ±force_limit
        M = K_p,rot (rpy_ref − rpy) + K_d,rot (ω_ref − ω)  saturated at ±torque_limit

    Returns
    -------
    ctrl : callable
        ctrl(t, pos, vel, rpy=None, rates=None) → u (6,)
    """
    kd = gains.damping(mass)
    ff = np.array([0.0, 0.0, mass * gravity])
    zero3 = np.zeros(3)

    def _ctrl(t, pos, vel, rpy=None, rates=None) -> np.ndarray:
        p_ref, v_ref, r_ref, w_ref = reference.sample(float(t))
        force = _pd_force(p_ref, v_ref, np.asarray(pos, float), np.asarray(vel, float),
                          gains.kp, kd, ff, gains.force_limit)
        torque = _pd_force(r_ref, w_ref,
                           zero3 if rpy is None else np.asarray(rpy, float),
                           zero3 if rates is None else np.asarray(rates, float),
                           gains.kp_rot, gains.kd_rot, zero3, gains.torque_limit)
        return np.concatenate([force, torque])

    return _ctrl
