"""
core/dynamics.py
────────────────
Continuous-time keypoint model of the belt

    ẋ = A x + B u + G + f(x, λ̄)

with x = [q, q̇] ∈ ℝ¹⁸, u = [F, M] ∈ ℝ⁶ applied to K1 and λ̄ = [λ̄0, λ̄1]
the elastic and contact force magnitudes.  A, B, G are constant; only the
force term f depends nonlinearly on the state, through two projection
operators:

    Π_{K1,p}   direction of the virtual cable (p = K2 in S1, O1 in S2)
    Π_{O1,K2}  direction of the rim contact force on K2

Also includes:
- the subtask-dependent cable length l(x)
- the contact point O_e on the rim of P1 and the relaxed gap λ3
- the scaled ellipsoid distance used for obstacle avoidance

Every quantity exists twice: a NumPy evaluator (simulation, tests) and a
CasADi builder (transcription).  The CasADi versions regularise their
denominators as √(‖d‖² + δ²) so derivatives stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence, Tuple, Union

import casadi as ca
import numpy as np

from core.errors import PreconditionError, SingularityError
from core.params import (
    CONTACT_EPSILON,
    SINGULAR_TOL,
    STATE_DIM,
    BeltModel,
    ControlInput,
    ForceVariables,
    Pulley,
    SystemState,
)

StateLike = Union[SystemState, np.ndarray, Sequence[float]]
InputLike = Union[ControlInput, np.ndarray, Sequence[float]]
ForceLike = Union[ForceVariables, np.ndarray, Sequence[float]]

_EZ = np.array([0.0, 0.0, 1.0])


def as_state_vector(x: StateLike) -> np.ndarray:
    return x.vector if isinstance(x, SystemState) else np.asarray(x, dtype=float)


def as_input_vector(u: InputLike) -> np.ndarray:
    return u.vector if isinstance(u, ControlInput) else np.asarray(u, dtype=float)


def as_force_vector(f: ForceLike) -> np.ndarray:
    return f.magnitudes if isinstance(f, ForceVariables) else np.asarray(f, dtype=float)[:2]


# ════════════════════════════════════════════════════════════════════════════
# 1.  Force context: which anchor and which rim point belong to a subtask      #
# ════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class ForceContext:
    """
    Subtask-dependent force geometry.

    The elastic anchor p is K2 in S1 and the centre O1 of the first pulley
    in S2; the cable length switches with it.  The contact point O_e is the
    rim point of P1 nearest to K2 in the pulley plane.
    """

    subtask_id: Literal["S1", "S2"]
    pulley1:    Pulley
    epsilon:    float = CONTACT_EPSILON     # contact smoothing ε [m]

    def __post_init__(self):
        if self.subtask_id not in ("S1", "S2"):
            raise PreconditionError(f"Unknown subtask '{self.subtask_id}'")
        if self.epsilon < 0.0:
            raise PreconditionError("epsilon must be nonnegative")

    def elastic_anchor(self, x: StateLike) -> np.ndarray:
        xv = as_state_vector(x)
        return xv[3:6].copy() if self.subtask_id == "S1" else self.pulley1.O

    def contact_point(self, x: StateLike) -> np.ndarray:
        return contact_point(as_state_vector(x)[3:6], self.pulley1)


# ════════════════════════════════════════════════════════════════════════════
# 2.  NumPy geometry                                                          #
# ════════════════════════════════════════════════════════════════════════════

def projection(from_point: Sequence[float], to_point: Sequence[float]) -> np.ndarray:
    """
    Unit vector (from − to)/‖from − to‖.

    Raises
    ------
    SingularityError
        If the two points coincide within SINGULAR_TOL.
    """
    d = np.asarray(from_point, dtype=float) - np.asarray(to_point, dtype=float)
    n = float(np.linalg.norm(d))
    if n <= SINGULAR_TOL:
        raise SingularityError(f"projection between coincident points {np.asarray(to_point).tolist()}")
    return d / n


def contact_point(k2: Sequence[float], pulley: Pulley) -> np.ndarray:
    """Rim point O_e = O + r·normalize(plane part of K2 − O); bottom of the rim if degenerate."""
    a = np.asarray(pulley.axis)
    d = np.asarray(k2, dtype=float) - pulley.O
    d_plane = d - (d @ a) * a
    n = float(np.linalg.norm(d_plane))
    if n <= SINGULAR_TOL:
        return pulley.O - pulley.groove_radius * _EZ
    return pulley.O + pulley.groove_radius * d_plane / n


def cable_length(x: StateLike, ctx: ForceContext) -> float:
    """
    Virtual cable length l(x):  ‖K1 − K2‖ in S1,  ‖K1 − O1‖ + r1 in S2.
    """
    xv = as_state_vector(x)
    k1 = xv[0:3]
    if ctx.subtask_id == "S1":
        return float(np.linalg.norm(k1 - xv[3:6]))
    return float(np.linalg.norm(k1 - ctx.pulley1.O)) + ctx.pulley1.groove_radius


def contact_gap(x: StateLike, ctx: ForceContext, epsilon: float | None = None) -> float:
    """Relaxed contact gap λ3 = √(‖K2 − O_e‖² + ε²) ≥ ε."""
    eps = ctx.epsilon if epsilon is None else float(epsilon)
    xv = as_state_vector(x)
    d = xv[3:6] - ctx.contact_point(xv)
    return float(np.sqrt(d @ d + eps * eps))


def ellipsoid_distance(
    point: Sequence[float],
    pulley: Pulley,
    semi_axes: Tuple[float, float, float] | None = None,
) -> float:
    """
    Scaled distance √((K−O)ᵀ S (K−O)) − 1 with S = diag(1/a², 1/b², 1/c²).

    The point is expressed in the pulley frame first (c along the shaft).
    Positive outside, zero on the surface, negative inside.  *semi_axes*
    overrides the flange ellipsoid, e.g. with ``pulley.groove_semi_axes``.
    """
    axes = np.asarray(pulley.ellipsoid_semi_axes if semi_axes is None else semi_axes)
    local = pulley.frame.T @ (np.asarray(point, dtype=float) - pulley.O)
    return float(np.sqrt(np.sum((local / axes) ** 2)) - 1.0)


# ════════════════════════════════════════════════════════════════════════════
# 3.  Vector field  ẋ = A x + B u + G + f(x, λ̄)                                #
# ════════════════════════════════════════════════════════════════════════════

@lru_cache(maxsize=32)
def _linear_part(belt: BeltModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    I3 = np.eye(3)
    A = np.zeros((STATE_DIM, STATE_DIM))
    A[0:9, 9:18] = np.eye(9)                              # q̇ feeds q
    A[9:12, 9:12] = -belt.k_d / belt.m1 * I3              # damper on K1
    A[9:12, 12:15] = belt.k_d / belt.m1 * I3
    A[12:15, 9:12] = belt.k_d / belt.m2 * I3              # reaction on K2
    A[12:15, 12:15] = -belt.k_d / belt.m2 * I3

    B = np.zeros((STATE_DIM, 6))
    B[9:12, 0:3] = I3 / belt.m1
    B[15:18, 3:6] = I3 / belt.inertia_M1                  # Euler-angle double integrator

    G = np.zeros(STATE_DIM)
    G[11] = -belt.gravity_g                               # K1 z-velocity row
    G[14] = -belt.gravity_g                               # K2 z-velocity row
    for arr in (A, B, G):
        arr.setflags(write=False)
    return A, B, G


def system_matrices(belt: BeltModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant matrices (A, B, G) of the keypoint model (read-only arrays)."""
    return _linear_part(belt)


def force_term(x: StateLike, f: ForceLike, belt: BeltModel, ctx: ForceContext) -> np.ndarray:
    """Nonlinear term f(x, λ̄) of the vector field."""
    xv, lam = as_state_vector(x), as_force_vector(f)
    k1, k2 = xv[0:3], xv[3:6]
    pi0 = projection(k1, ctx.elastic_anchor(xv))
    pi1 = projection(ctx.pulley1.O, k2)

    out = np.zeros(STATE_DIM)
    out[9:12] = -pi0 * lam[0] / belt.m1
    out[12:15] = (pi0 * lam[0] - pi1 * lam[1]) / belt.m2
    return out


def vector_field(
    x: StateLike,
    u: InputLike,
    f: ForceLike,
    belt: BeltModel,
    ctx: ForceContext,
) -> np.ndarray:
    """
    Continuous-time RHS ẋ of the keypoint model.

    Parameters
    ----------
    x : SystemState or ndarray (18,)
    u : ControlInput or ndarray (6,)
    f : ForceVariables or ndarray (2,)
        Only the magnitudes λ̄0, λ̄1 enter the dynamics.
    belt : BeltModel
    ctx : ForceContext

    Returns
    -------
    ndarray (18,)
    """
    A, B, G = _linear_part(belt)
    xv = as_state_vector(x)
    return A @ xv + B @ as_input_vector(u) + G + force_term(xv, f, belt, ctx)


# ════════════════════════════════════════════════════════════════════════════
# 4.  CasADi builders (symbolic, regularised)                                 #
# ════════════════════════════════════════════════════════════════════════════

def casadi_projection(a, b, delta: float = SINGULAR_TOL):
    d = a - b
    return d / ca.sqrt(ca.sumsqr(d) + delta**2)


def _casadi_norm(d, delta: float = SINGULAR_TOL):
    return ca.sqrt(ca.sumsqr(d) + delta**2)


def casadi_contact_point(k2, pulley: Pulley):
    a = ca.DM(pulley.axis)
    O = ca.DM(pulley.O)
    d = k2 - O
    d_plane = d - ca.dot(d, a) * a
    n2 = ca.sumsqr(d_plane)
    rim = O + pulley.groove_radius * d_plane / _casadi_norm(d_plane)
    bottom = O - pulley.groove_radius * ca.DM(_EZ)
    return ca.if_else(n2 > SINGULAR_TOL**2, rim, bottom)


def casadi_cable_length(x, ctx: ForceContext):
    if ctx.subtask_id == "S1":
        return _casadi_norm(x[0:3] - x[3:6])
    return _casadi_norm(x[0:3] - ca.DM(ctx.pulley1.O)) + ctx.pulley1.groove_radius


def casadi_contact_gap(x, ctx: ForceContext):
    d = x[3:6] - casadi_contact_point(x[3:6], ctx.pulley1)
    return ca.sqrt(ca.sumsqr(d) + ctx.epsilon**2)


def casadi_ellipsoid_distance(point, pulley: Pulley, semi_axes=None):
    axes = np.asarray(pulley.ellipsoid_semi_axes if semi_axes is None else semi_axes)
    local = ca.mtimes(ca.DM(pulley.frame.T), point - ca.DM(pulley.O))
    return ca.sqrt(ca.sumsqr(local / ca.DM(axes))) - 1.0


def casadi_rhs(belt: BeltModel, ctx: ForceContext) -> ca.Function:
    """
    Create a CasADi function  f(x, u, λ̄) = ẋ  for the transcription.

    Returns
    -------
    ca.Function
        Inputs x (18), u (6), lam (2); output ẋ (18).
    """
    x = ca.SX.sym("x", STATE_DIM)
    u = ca.SX.sym("u", 6)
    lam = ca.SX.sym("lam", 2)
    A, B, G = _linear_part(belt)

    k1, k2 = x[0:3], x[3:6]
    anchor = k2 if ctx.subtask_id == "S1" else ca.DM(ctx.pulley1.O)
    pi0 = casadi_projection(k1, anchor)
    pi1 = casadi_projection(ca.DM(ctx.pulley1.O), k2)

    forces = ca.vertcat(
        ca.DM.zeros(9),
        -pi0 * lam[0] / belt.m1,
        (pi0 * lam[0] - pi1 * lam[1]) / belt.m2,
        ca.DM.zeros(3),
    )
    xdot = ca.mtimes(ca.DM(A), x) + ca.mtimes(ca.DM(B), u) + ca.DM(G) + forces
    return ca.Function("rhs", [x, u, lam], [xdot], ["x", "u", "lam"], ["xdot"])
