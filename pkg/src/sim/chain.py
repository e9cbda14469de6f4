"""
sim/chain.py

Chain-belt plant: an independent check of the planned trajectories.

The belt is a closed loop of M point masses.  Neighbours are joined by
stretch-only spring-dampers.  Optional compression-only springs between
every second neighbour (ChainConfig.bending_stiffness, 0 by default) resist
folding.  Pulleys are rigid cylinders (groove core plus two flanges)
resolved by penalty contact.  The grip node is driven along the planned K1
path by the PD law of sim.simulate.

The time loop runs in a numba kernel (semi-implicit Euler, dt = 1e-4 s).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit
from scipy.optimize import brentq

from control.mpcc import TrajectorySolution
from core.errors import PreconditionError, SimulationBlowUp
from core.params import Pulley, Scenario
from sim.assembly import AssemblyOutcome, detect_success
from sim.simulate import (
    BLOW_UP_LIMIT,
    CONTACT_DAMPING,
    CONTACT_STIFFNESS,
    K1Reference,
    TrackingGains,
    _pd_force,
    _sample_reference,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainConfig:
    nodes:             int = 41
    total_mass:        float = 0.084              # 2 × keypoint mass [kg]
    segment_damping:   float = 0.005              # [N·s/m]
    bending_stiffness: float = 0.0                # skip-one compression springs, off by default [N/m]
    node_drag:         float = 0.1                # to ground [N·s/m]
    contact_stiffness: float = CONTACT_STIFFNESS
    contact_damping:   float = CONTACT_DAMPING
    dt:                float = 1e-4               # [s]
    log_every:         int = 100
    settle_time:       float = 1.0                # hold at the last knot [s]
    blow_up:           float = BLOW_UP_LIMIT

    def __post_init__(self):
        if self.nodes < 4 or self.log_every < 1:
            raise PreconditionError("chain needs at least 4 nodes and log_every ≥ 1")
        positive = (self.total_mass, self.segment_damping, self.node_drag,
                    self.contact_stiffness, self.contact_damping, self.dt, self.blow_up)
        if not all(v > 0.0 for v in positive) or self.settle_time < 0.0 or self.bending_stiffness < 0.0:
            raise PreconditionError("chain parameters must be positive")

    @property
    def node_mass(self) -> float:
        return self.total_mass / self.nodes

    def segment_stiffness(self, k_p: float) -> float:
        """M springs in series reproduce the keypoint cable: k_seg = k_p · M / 2."""
        return k_p * self.nodes / 2.0


@dataclass(frozen=True, eq=False)
class ChainBeltState:
    positions:         np.ndarray       # (M×3) [m]
    velocities:        np.ndarray       # (M×3) [m/s]
    grip_index:        int
    rest_lengths:      np.ndarray       # (M,) segment i joins node i and i+1 mod M
    segment_stiffness: float
    grip_rpy:          Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        M = self.rest_lengths.size
        if self.positions.shape != (M, 3) or self.velocities.shape != (M, 3):
            raise PreconditionError(f"chain state arrays do not match {M} nodes")
        if not 0 <= self.grip_index < M:
            raise PreconditionError(f"grip index {self.grip_index} outside 0..{M - 1}")

    @property
    def nodes(self) -> int:
        return self.rest_lengths.size

    @property
    def circumference(self) -> float:
        return float(self.rest_lengths.sum())

    def segment_lengths(self) -> np.ndarray:
        d = np.roll(self.positions, -1, axis=0) - self.positions
        return np.linalg.norm(d, axis=1)

    def segment_tensions(self) -> np.ndarray:
        """Static spring tension per segment, zero for slack segments."""
        return self.segment_stiffness * np.maximum(self.segment_lengths() - self.rest_lengths, 0.0)


@dataclass(frozen=True, eq=False)
class ChainTrace:
    t:               np.ndarray        # (K,)
    positions:       np.ndarray        # (K×M×3)
    tensions:        np.ndarray        # (K×M) segment forces
    segment_lengths: np.ndarray        # (K×M)
    grip_reference:  np.ndarray        # (K×3)
    grip_force:      np.ndarray        # (K×3)
    kinetic_energy:  np.ndarray        # (K,)
    max_penetration: float


# ─────────────────────────────────────────────────────────────────────────────
# Initial loop
# ─────────────────────────────────────────────────────────────────────────────
def ellipse_perimeter(a: float, b: float) -> float:
    """Ramanujan's approximation."""
    return math.pi * (3.0 * (a + b) - math.sqrt((3.0 * a + b) * (a + 3.0 * b)))


def initial_loop(
    scenario: Scenario,
    config: ChainConfig = ChainConfig(),
    k1: Optional[Sequence[float]] = None,
    k2: Optional[Sequence[float]] = None,
) -> ChainBeltState:
    """
    Chain at rest on an ellipse through K1 (top, grip node 0) and K2.

    The ellipse lies in the plane normal to P1's shaft; its second semi-axis
    is chosen so that the perimeter equals the belt circumference.
    """
    top = np.asarray(scenario.initial_state.k1 if k1 is None else k1, dtype=float)
    bottom = np.asarray(scenario.initial_state.k2 if k2 is None else k2, dtype=float)
    P = scenario.belt_length
    a = 0.5 * float(np.linalg.norm(top - bottom))
    if not 0.0 < 4.0 * a < P:
        raise PreconditionError(f"keypoint separation {2 * a:.4f} m does not fit a loop of {P:.4f} m")
    up = (top - bottom) / (2.0 * a)
    side = np.cross(np.asarray(scenario.pulley1.axis), up)
    if np.linalg.norm(side) < 1e-9:
        side = np.cross(up, [0.0, 0.0, 1.0] if abs(up[2]) < 0.9 else [0.0, 1.0, 0.0])
    side /= np.linalg.norm(side)
    b = brentq(lambda bb: ellipse_perimeter(a, bb) - P, 0.0, P)

    theta = np.linspace(0.0, 2.0 * np.pi, 4001)
    centre = 0.5 * (top + bottom)
    pts = centre + np.outer(np.cos(theta), a * up) + np.outer(np.sin(theta), b * side)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])

    M = config.nodes
    th = np.interp(np.arange(M) / M * arc[-1], arc, theta)
    positions = centre + np.outer(np.cos(th), a * up) + np.outer(np.sin(th), b * side)
    return ChainBeltState(
        positions=positions,
        velocities=np.zeros((M, 3)),
        grip_index=0,
        rest_lengths=np.full(M, P / M),
        segment_stiffness=config.segment_stiffness(scenario.belt.k_p),
        grip_rpy=tuple(float(v) for v in scenario.initial_state.q.k1_rpy),
    )


# ─────────────────────────────────────────────────────────────────────────────
# Kernels
# ─────────────────────────────────────────────────────────────────────────────
@njit(cache=True)
def _chain_forces(pos, vel, masses, rest, k_seg, c_seg, bend_rest, k_bend, drag, g,
                  centres, axes, e1s, r_core, r_flange, half_width, groove_half,
                  k_c, c_c, force, tension):
    """Fill *force* and *tension*; return the deepest pulley penetration."""
    M = pos.shape[0]
    for i in range(M):
        for j in range(3):
            force[i, j] = -drag * vel[i, j]
        force[i, 2] -= masses[i] * g

    # stretch-only segments
    for i in range(M):
        j = (i + 1) % M
        d = pos[j] - pos[i]
        length = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        tension[i] = 0.0
        if length > rest[i] and length > 1e-12:
            n = d / length
            rel = (vel[j, 0] - vel[i, 0]) * n[0] + (vel[j, 1] - vel[i, 1]) * n[1] + (vel[j, 2] - vel[i, 2]) * n[2]
            f = k_seg * (length - rest[i]) + c_seg * rel
            if f > 0.0:
                tension[i] = f
                for k in range(3):
                    force[i, k] += f * n[k]
                    force[j, k] -= f * n[k]

    # compression-only skip-one springs
    for i in range(M if k_bend > 0.0 else 0):
        j = (i + 2) % M
        d = pos[j] - pos[i]
        length = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if length < bend_rest and length > 1e-12:
            f = k_bend * (bend_rest - length)
            for k in range(3):
                force[i, k] -= f * d[k] / length
                force[j, k] += f * d[k] / length

    # pulley contact: groove core [−w, w] and flanges g ≤ |s| ≤ w
    deepest = 0.0
    n = np.empty(3)
    for p in range(centres.shape[0]):
        ax = axes[p]
        for i in range(M):
            d = pos[i] - centres[p]
            s = d[0] * ax[0] + d[1] * ax[1] + d[2] * ax[2]
            rad = d - s * ax
            rho = math.sqrt(rad[0] * rad[0] + rad[1] * rad[1] + rad[2] * rad[2])
            best = 0.0
            for prim in range(3):
                if prim == 0:
                    R, a0, a1 = r_core[p], -half_width[p], half_width[p]
                elif prim == 1:
                    R, a0, a1 = r_flange[p], groove_half[p], half_width[p]
                else:
                    R, a0, a1 = r_flange[p], -half_width[p], -groove_half[p]
                if rho >= R or s < a0 or s > a1:
                    continue
                depth, sign = R - rho, 0.0
                if s - a0 < depth:
                    depth, sign = s - a0, -1.0
                if a1 - s < depth:
                    depth, sign = a1 - s, 1.0
                if depth > best:
                    best = depth
                    if sign != 0.0:
                        for k in range(3):
                            n[k] = sign * ax[k]
                    elif rho > 1e-12:
                        for k in range(3):
                            n[k] = rad[k] / rho
                    else:
                        for k in range(3):
                            n[k] = e1s[p, k]
            if best > 0.0:
                vn = vel[i, 0] * n[0] + vel[i, 1] * n[1] + vel[i, 2] * n[2]
                f = k_c * best - c_c * vn
                if f > 0.0:
                    for k in range(3):
                        force[i, k] += f * n[k]
                if best > deepest:
                    deepest = best
    return deepest


@njit(cache=True)
def _integrate(pos, vel, masses, grip, rest, k_seg, c_seg, bend_rest, k_bend, drag, g,
               centres, axes, e1s, r_core, r_flange, half_width, groove_half, k_c, c_c,
               ref_t, ref_p, ref_v, kp, kd, feedforward, limit,
               dt, n_steps, log_every, blow_up):
    M = pos.shape[0]
    n_log = n_steps // log_every + 1
    log_t = np.empty(n_log)
    log_pos = np.empty((n_log, M, 3))
    log_ten = np.empty((n_log, M))
    log_len = np.empty((n_log, M))
    log_ref = np.empty((n_log, 3))
    log_grip = np.empty((n_log, 3))
    log_ke = np.empty(n_log)
    force = np.zeros((M, 3))
    tension = np.zeros(M)
    max_pen = 0.0
    status = 0
    t_fail = 0.0
    li = 0

    for step in range(n_steps + 1):
        t = step * dt
        pen = _chain_forces(pos, vel, masses, rest, k_seg, c_seg, bend_rest, k_bend, drag, g,
                            centres, axes, e1s, r_core, r_flange, half_width, groove_half,
                            k_c, c_c, force, tension)
        if pen > max_pen:
            max_pen = pen
        p_ref, v_ref = _sample_reference(t, ref_t, ref_p, ref_v)
        u = _pd_force(p_ref, v_ref, pos[grip], vel[grip], kp, kd, feedforward, limit)
        for k in range(3):
            force[grip, k] += u[k]

        if step % log_every == 0:
            log_t[li] = t
            ke = 0.0
            for i in range(M):
                j = (i + 1) % M
                d = pos[j] - pos[i]
                log_len[li, i] = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
                log_ten[li, i] = tension[i]
                for k in range(3):
                    log_pos[li, i, k] = pos[i, k]
                    ke += 0.5 * masses[i] * vel[i, k] * vel[i, k]
            log_ke[li] = ke
            for k in range(3):
                log_ref[li, k] = p_ref[k]
                log_grip[li, k] = u[k]
            li += 1
        if step == n_steps:
            break

        bad = False
        for i in range(M):
            for k in range(3):
                vel[i, k] += dt * force[i, k] / masses[i]
                pos[i, k] += dt * vel[i, k]
                if not (abs(pos[i, k]) <= blow_up and abs(vel[i, k]) <= blow_up):
                    bad = True
        if bad:
            status = 1
            t_fail = t + dt
            break

    return (log_t[:li], log_pos[:li], log_ten[:li], log_len[:li], log_ref[:li],
            log_grip[:li], log_ke[:li], max_pen, status, t_fail)


# ─────────────────────────────────────────────────────────────────────────────
# Public API
# ─────────────────────────────────────────────────────────────────────────────
def _pulley_arrays(pulleys: Sequence[Pulley]):
    P = len(pulleys)
    centres = np.array([p.O for p in pulleys], dtype=float).reshape(P, 3)
    axes = np.array([p.axis for p in pulleys], dtype=float).reshape(P, 3)
    e1s = np.array([p.frame[:, 0] for p in pulleys], dtype=float).reshape(P, 3)
    r_core = np.array([p.groove_radius for p in pulleys], dtype=float)
    r_flange = np.array([p.flange_radius for p in pulleys], dtype=float)
    half_width = np.array([p.ellipsoid_semi_axes[2] for p in pulleys], dtype=float)
    groove_half = np.array([p.groove_half_width for p in pulleys], dtype=float)
    return centres, axes, e1s, r_core, r_flange, half_width, groove_half


def run_chain(
    state: ChainBeltState,
    reference: K1Reference,
    duration: float,
    *,
    gains: TrackingGains = TrackingGains(),
    config: ChainConfig = ChainConfig(),
    pulleys: Sequence[Pulley] = (),
    gravity: float = 9.81,
) -> Tuple[ChainTrace, ChainBeltState]:
    """
    Integrate the chain for *duration* seconds with the grip node on *reference*.

    Raises
    ------
    SimulationBlowUp
        When a node position or velocity leaves ±config.blow_up or turns non-finite.
    """
    M = state.nodes
    masses = np.full(M, config.node_mass)
    m_grip = masses[state.grip_index]
    kd = gains.damping(m_grip)
    feedforward = np.array([0.0, 0.0, m_grip * gravity])
    bend_rest = 2.0 * (state.circumference / (2.0 * math.pi)) * math.sin(2.0 * math.pi / M)
    n_steps = int(round(duration / config.dt))

    out = _integrate(
        state.positions.copy(), state.velocities.copy(), masses, state.grip_index,
        state.rest_lengths, state.segment_stiffness, config.segment_damping,
        bend_rest, config.bending_stiffness, config.node_drag, gravity,
        *_pulley_arrays(pulleys), config.contact_stiffness, config.contact_damping,
        reference.times, reference.positions, reference.velocities,
        gains.kp, kd, feedforward, gains.force_limit,
        config.dt, n_steps, config.log_every, config.blow_up,
    )
    t, pos, ten, lengths, ref, grip_f, ke, max_pen, status, t_fail = out
    if status:
        raise SimulationBlowUp("chain plant left the admissible range", float(t_fail))

    trace = ChainTrace(t, pos, ten, lengths, ref, grip_f, ke, float(max_pen))
    # velocities from the last two logged frames
    if t.size >= 2:
        velocities = (pos[-1] - pos[-2]) / (t[-1] - t[-2])
    else:
        velocities = np.zeros((M, 3))
    _, _, rpy, _ = reference.sample(float(t[-1]))
    final = ChainBeltState(
        positions=pos[-1].copy(), velocities=velocities, grip_index=state.grip_index,
        rest_lengths=state.rest_lengths, segment_stiffness=state.segment_stiffness,
        grip_rpy=tuple(float(v) for v in rpy),
    )
    return trace, final


def simulate_chain(
    solutions: Union[TrajectorySolution, Sequence[Optional[TrajectorySolution]]],
    scenario: Scenario,
    gains: TrackingGains = TrackingGains(),
    config: ChainConfig = ChainConfig(),
) -> Tuple[ChainTrace, AssemblyOutcome]:
    """
    Replay the planned K1 path (S1 then S2) on the chain plant and judge the result.

    Parameters
    ----------
    solutions : TrajectorySolution or sequence of them
        Converged subtask solutions in execution order.
    gains : TrackingGains
        Grip PD gains; the derivative gain defaults to critical damping.
    """
    sols = [solutions] if isinstance(solutions, TrajectorySolution) else [s for s in solutions if s is not None]
    if not sols:
        raise PreconditionError("no solution to replay")
    for s in sols:
        if not s.converged:
            raise PreconditionError(f"{s.subtask_id} status is {s.status}, replay needs converged")

    reference = K1Reference.from_solutions(*sols)
    x0 = sols[0].states[0]
    state = initial_loop(scenario, config, k1=x0[0:3], k2=x0[3:6])
    trace, final = run_chain(
        state, reference, reference.duration + config.settle_time,
        gains=gains, config=config, pulleys=(scenario.pulley1, scenario.pulley2),
        gravity=scenario.belt.gravity_g,
    )
    outcome = detect_success(final, scenario, max_penetration=trace.max_penetration)
    logger.info("chain replay %s: success=%s wrapped=(%s, %s) tension=%.3f N penetration=%.2e m",
                scenario.name, outcome.success, outcome.wrapped_p1, outcome.wrapped_p2,
                outcome.final_tension, outcome.max_penetration)
    return trace, outcome
