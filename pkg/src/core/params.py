"""
core/params.py
──────────────────
Domain types of the belt-drive assembly planner.

Every type is an immutable dataclass that validates its invariants on
construction, so a value that exists is a value that is physically admissible.
Units are SI throughout: metres, seconds, kilograms, newtons, radians.

Flattened layouts used everywhere else
--------------------------------------
    q = [K1x, K1y, K1z, K2x, K2y, K2z, roll, pitch, yaw]          (9)
    x = [q, q̇]                                                     (18)
    u = [Fx, Fy, Fz, Mx, My, Mz]        applied to K1               (6)
    λ̄ = [λ̄0, λ̄1]   elastic / contact force magnitudes              (2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence, Tuple

import numpy as np

from core.errors import ScenarioValidationError

Vec3 = Tuple[float, float, float]
SubtaskId = Literal["S1", "S2"]

# ── Dimensions of the flattened vectors ────────────────────────────────────
CONFIG_DIM = 9
STATE_DIM = 18
INPUT_DIM = 6
FORCE_DIM = 2

# ── Numerical constants shared by model, transcription and simulators ──────
GRAVITY = 9.81            # [m/s²]
CONTACT_EPSILON = 1e-3    # contact smoothing ε of the relaxed gap [m]
SINGULAR_TOL = 1e-9       # δ_sing, projection denominators [m]

# ── Horizon defaults ───────────────────────────────────────────────────────
DEFAULT_HORIZON = 300     # knots per subtask (2 × 300 = 600 steps)
DESK_HORIZON = 100        # desk-scale / CI horizon
DEFAULT_STEP = 0.05       # [s]


def _vector(values: Sequence[float], n: int, name: str) -> tuple:
    """Coerce *values* to a finite n-tuple of floats or raise."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.shape != (n,):
        raise ScenarioValidationError(
            f"{name} dimension", f"expected {n} components, got {arr.size}"
        )
    if not np.all(np.isfinite(arr)):
        raise ScenarioValidationError(f"{name} finiteness", str(arr.tolist()))
    return tuple(float(v) for v in arr)


def pulley_frame(axis: Sequence[float]) -> np.ndarray:
    """
    Orthonormal frame [e1 e2 e3] (columns) whose third axis is the shaft.

    e1 is the projection of world x onto the pulley plane, or of world y when
    the shaft itself is (nearly) parallel to x; e2 = e3 × e1.
    """
    e3 = np.asarray(axis, dtype=float)
    ref = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ e3) * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.column_stack([e1, e2, e3])


# ════════════════════════════════════════════════════════════════════════════
# 1.  Keypoint state, inputs and force variables                              #
# ════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class KeypointConfig:
    """Generalised coordinates q: both keypoint positions and K1's orientation."""

    k1_pos: Vec3                          # grasped keypoint K1 [m]
    k2_pos: Vec3                          # opposite keypoint K2 [m]
    k1_rpy: Vec3 = (0.0, 0.0, 0.0)        # roll, pitch, yaw of K1 [rad]

    def __post_init__(self):
        object.__setattr__(self, "k1_pos", _vector(self.k1_pos, 3, "k1_pos"))
        object.__setattr__(self, "k2_pos", _vector(self.k2_pos, 3, "k2_pos"))
        object.__setattr__(self, "k1_rpy", _vector(self.k1_rpy, 3, "k1_rpy"))
        if any(abs(a) > math.pi + 1e-12 for a in self.k1_rpy):
            raise ScenarioValidationError("tilt-angle bound", f"rpy = {self.k1_rpy}")

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.k1_pos + self.k2_pos + self.k1_rpy)

    @classmethod
    def from_vector(cls, q: Sequence[float]) -> "KeypointConfig":
        q = _vector(q, CONFIG_DIM, "q")
        return cls(q[0:3], q[3:6], q[6:9])


@dataclass(frozen=True)
class SystemState:
    """Full state x = [q, q̇]."""

    q: KeypointConfig
    qdot: tuple = (0.0,) * CONFIG_DIM     # [m/s] ×6, [rad/s] ×3

    def __post_init__(self):
        object.__setattr__(self, "qdot", _vector(self.qdot, CONFIG_DIM, "qdot"))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q.vector, np.asarray(self.qdot)])

    @property
    def k1(self) -> np.ndarray:
        return np.asarray(self.q.k1_pos)

    @property
    def k2(self) -> np.ndarray:
        return np.asarray(self.q.k2_pos)

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "SystemState":
        x = _vector(x, STATE_DIM, "x")
        return cls(KeypointConfig.from_vector(x[:CONFIG_DIM]), x[CONFIG_DIM:])

    @classmethod
    def at_rest(cls, k1: Sequence[float], k2: Sequence[float],
                rpy: Sequence[float] = (0.0, 0.0, 0.0)) -> "SystemState":
        return cls(KeypointConfig(tuple(k1), tuple(k2), tuple(rpy)))


@dataclass(frozen=True)
class ControlInput:
    force: Vec3 = (0.0, 0.0, 0.0)         # on K1 [N]
    torque: Vec3 = (0.0, 0.0, 0.0)        # on K1 [N·m]

    def __post_init__(self):
        object.__setattr__(self, "force", _vector(self.force, 3, "force"))
        object.__setattr__(self, "torque", _vector(self.torque, 3, "torque"))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.force + self.torque)

    @classmethod
    def from_vector(cls, u: Sequence[float]) -> "ControlInput":
        u = _vector(u, INPUT_DIM, "u")
        return cls(u[0:3], u[3:6])

    @classmethod
    def gravity_compensation(cls, belt: "BeltModel") -> "ControlInput":
        """Vertical force that holds K1's own weight."""
        return cls((0.0, 0.0, belt.m1 * belt.gravity_g))


@dataclass(frozen=True)
class ForceVariables:
    """
    Force magnitudes and the two algebraic slack quantities.

    elastic_slack is λ2 = λ̄0/k_p + L − l(x) and contact_slack is the relaxed
    gap λ3 = √(‖K2 − O_e‖² + ε²).
    """

    elastic_mag: float = 0.0              # λ̄0 [N]
    contact_mag: float = 0.0              # λ̄1 [N]
    elastic_slack: float = 0.0            # λ2 [m]
    contact_slack: float = CONTACT_EPSILON  # λ3 [m]

    def __post_init__(self):
        if not (self.elastic_mag >= 0.0 and self.contact_mag >= 0.0):
            raise ScenarioValidationError("force magnitudes nonnegative")
        if self.elastic_slack < 0.0:
            raise ScenarioValidationError("elastic slack nonnegative")
        if self.contact_slack <= 0.0:
            raise ScenarioValidationError("contact slack positive")

    @property
    def magnitudes(self) -> np.ndarray:
        return np.array([self.elastic_mag, self.contact_mag])


# ════════════════════════════════════════════════════════════════════════════
# 2.  Physical parameters and geometry                                        #
# ════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class BeltModel:
    # ── Keypoint inertia ───────────────────────────────────────────────────
    m1:              float = 0.042     # mass of K1 [kg]
    m2:              float = 0.042     # mass of K2 [kg]
    inertia_M1:      float = 1e-7      # moment of inertia of K1 [kg·m²]

    # ── Virtual elastic cable between K1 and its anchor ────────────────────
    k_p:             float = 63.34     # stiffness [N/m]
    k_d:             float = 4.65      # damping [N·s/m]
    rest_length_L:   float = 0.1829    # length at ρ0 [m], see for_loop()
    max_length_Lmax: float = 0.45      # break limit [m]

    gravity_g:       float = GRAVITY   # [m/s²]

    def __post_init__(self):
        values = (self.m1, self.m2, self.inertia_M1, self.k_p, self.k_d,
                  self.rest_length_L, self.max_length_Lmax, self.gravity_g)
        if not all(math.isfinite(v) and v > 0.0 for v in values):
            raise ScenarioValidationError("BeltModel positivity", str(values))
        if not self.rest_length_L < self.max_length_Lmax:
            raise ScenarioValidationError(
                "BeltModel rest length below maximum",
                f"L = {self.rest_length_L}, L_max = {self.max_length_Lmax}",
            )

    @classmethod
    def for_loop(cls, belt_length: float, groove_radius: float, **overrides) -> "BeltModel":
        """
        Belt model sized for a loop of circumference *belt_length*.

        The rest length is half the loop taut around a groove of radius r
        measured to the far keypoint:  L = (P − π r)/2 + r.  The break limit
        leaves 5 cm above the full circumference.
        """
        kwargs = dict(
            rest_length_L=(belt_length - math.pi * groove_radius) / 2.0 + groove_radius,
            max_length_Lmax=belt_length + 0.05,
        )
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass(frozen=True)
class Pulley:
    center:              Vec3                          # O_j [m]
    groove_radius:       float                         # r_j [m]
    ellipsoid_semi_axes: Vec3                          # (a, b, c), c along the shaft [m]
    axis:                Vec3 = (1.0, 0.0, 0.0)        # shaft direction (unit)
    groove_half_width:   float = 0.004                 # channel half width [m]

    def __post_init__(self):
        object.__setattr__(self, "center", _vector(self.center, 3, "pulley center"))
        object.__setattr__(self, "axis", _vector(self.axis, 3, "pulley axis"))
        object.__setattr__(self, "ellipsoid_semi_axes",
                           _vector(self.ellipsoid_semi_axes, 3, "ellipsoid semi-axes"))
        if not self.groove_radius > 0.0:
            raise ScenarioValidationError("Pulley groove radius positive", str(self.groove_radius))
        if not all(s > 0.0 for s in self.ellipsoid_semi_axes):
            raise ScenarioValidationError("Pulley semi-axes positive", str(self.ellipsoid_semi_axes))
        if abs(math.sqrt(sum(a * a for a in self.axis)) - 1.0) > 1e-9:
            raise ScenarioValidationError("Pulley axis unit norm", str(self.axis))
        if not 0.0 < self.groove_half_width < self.ellipsoid_semi_axes[2]:
            raise ScenarioValidationError("Pulley groove inside flanges", str(self.groove_half_width))

    @property
    def O(self) -> np.ndarray:
        return np.asarray(self.center)

    @property
    def frame(self) -> np.ndarray:
        return pulley_frame(self.axis)

    @property
    def flange_radius(self) -> float:
        return self.ellipsoid_semi_axes[0]

    @property
    def groove_semi_axes(self) -> Vec3:
        """Ellipsoid of the groove core: the rim radius in-plane, full width along the shaft."""
        return (self.groove_radius, self.groove_radius, self.ellipsoid_semi_axes[2])


# ════════════════════════════════════════════════════════════════════════════
# 3.  Box bounds, subtask definition and scenario                             #
# ════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class Bounds:
    """Lower/upper limits on q, q̇, u and λ̄."""

    q_lower:    tuple
    q_upper:    tuple
    qdot_lower: tuple
    qdot_upper: tuple
    u_lower:    tuple
    u_upper:    tuple
    lam_lower:  tuple = (0.0, 0.0)
    lam_upper:  tuple = (50.0, 50.0)

    def __post_init__(self):
        for name, n in (("q", CONFIG_DIM), ("qdot", CONFIG_DIM), ("u", INPUT_DIM), ("lam", FORCE_DIM)):
            lo = _vector(getattr(self, f"{name}_lower"), n, f"{name}_lower")
            hi = _vector(getattr(self, f"{name}_upper"), n, f"{name}_upper")
            if any(a > b for a, b in zip(lo, hi)):
                raise ScenarioValidationError(f"{name} bounds ordered", f"{lo} > {hi}")
            object.__setattr__(self, f"{name}_lower", lo)
            object.__setattr__(self, f"{name}_upper", hi)
        if any(a < 0.0 for a in self.lam_lower):
            raise ScenarioValidationError("force magnitude bounds nonnegative", str(self.lam_lower))

    @classmethod
    def symmetric(
        cls,
        position: float = 1.0,            # ±1 m
        velocity: float = 0.5,            # ±0.5 m/s
        tilt: float = math.pi,            # ±π rad
        angular_rate: float = 1.0,        # ±1 rad/s (not given by the source data)
        force: float = 50.0,              # ±50 N
        torque: float = 1.0,              # ±1 N·m
        force_magnitude: float = 50.0,    # λ̄ ∈ [0, 50] N
    ) -> "Bounds":
        q_hi = (position,) * 6 + (tilt,) * 3
        qd_hi = (velocity,) * 6 + (angular_rate,) * 3
        u_hi = (force,) * 3 + (torque,) * 3
        return cls(
            q_lower=tuple(-v for v in q_hi), q_upper=q_hi,
            qdot_lower=tuple(-v for v in qd_hi), qdot_upper=qd_hi,
            u_lower=tuple(-v for v in u_hi), u_upper=u_hi,
            lam_lower=(0.0, 0.0), lam_upper=(force_magnitude, force_magnitude),
        )

    @property
    def x_lower(self) -> np.ndarray:
        return np.array(self.q_lower + self.qdot_lower)

    @property
    def x_upper(self) -> np.ndarray:
        return np.array(self.q_upper + self.qdot_upper)

    def contains_state(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.x_lower - tol) and np.all(x <= self.x_upper + tol))


@dataclass(frozen=True)
class SubtaskSpec:
    id:              SubtaskId
    goal_state:      SystemState           # x^goal
    weight_Q:        tuple                 # 18 diagonal entries
    weight_R:        tuple                 # 6 diagonal entries
    weight_w:        float = 0.0           # tension tracking weight
    desired_tension: float = 0.0           # λ̄0^desired [N]
    horizon_N:       int = DEFAULT_HORIZON
    step_h:          float = DEFAULT_STEP  # [s]
    bounds:          Bounds = field(default_factory=Bounds.symmetric)

    def __post_init__(self):
        if self.id not in ("S1", "S2"):
            raise ScenarioValidationError("subtask id", repr(self.id))
        object.__setattr__(self, "weight_Q", _vector(self.weight_Q, STATE_DIM, "weight_Q"))
        object.__setattr__(self, "weight_R", _vector(self.weight_R, INPUT_DIM, "weight_R"))
        if int(self.horizon_N) != self.horizon_N or self.horizon_N < 2:
            raise ScenarioValidationError("horizon at least 2", str(self.horizon_N))
        object.__setattr__(self, "horizon_N", int(self.horizon_N))
        if not self.step_h > 0.0:
            raise ScenarioValidationError("step positive", str(self.step_h))
        if min(self.weight_Q) < 0.0 or min(self.weight_R) < 0.0 or self.weight_w < 0.0:
            raise ScenarioValidationError("weights nonnegative")
        if self.id == "S1" and self.weight_w != 0.0:
            raise ScenarioValidationError("S1 tension weight is zero", str(self.weight_w))
        if self.desired_tension < 0.0:
            raise ScenarioValidationError("desired tension nonnegative", str(self.desired_tension))

    @property
    def Q(self) -> np.ndarray:
        return np.asarray(self.weight_Q)

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.weight_R)

    @property
    def duration(self) -> float:
        return self.horizon_N * self.step_h


@dataclass(frozen=True)
class Scenario:
    name:          str
    pulley1:       Pulley
    pulley2:       Pulley
    belt:          BeltModel
    belt_length:   float                 # P_belt, loop circumference [m]
    initial_state: SystemState           # configuration ρ0
    subtask_s1:    SubtaskSpec
    subtask_s2:    SubtaskSpec

    def __post_init__(self):
        if not self.belt_length > 0.0:
            raise ScenarioValidationError("belt length positive", str(self.belt_length))
        if (self.subtask_s1.id, self.subtask_s2.id) != ("S1", "S2"):
            raise ScenarioValidationError("subtask ids", f"{self.subtask_s1.id}, {self.subtask_s2.id}")
        sep = float(np.linalg.norm(self.initial_state.k1 - self.initial_state.k2))
        if sep > self.belt.rest_length_L + 1e-12:
            raise ScenarioValidationError(
                "initial belt slack", f"‖K1−K2‖ = {sep:.6f} > L = {self.belt.rest_length_L:.6f}"
            )
        if not self.belt.max_length_Lmax > self.wrap_length:
            raise ScenarioValidationError(
                "maximum length covers two-pulley wrap",
                f"L_max = {self.belt.max_length_Lmax:.6f} ≤ {self.wrap_length:.6f}",
            )

    @property
    def wrap_length(self) -> float:
        """Taut loop length around both grooves: 2‖O1−O2‖ + π(r1 + r2)."""
        d = float(np.linalg.norm(self.pulley1.O - self.pulley2.O))
        return 2.0 * d + math.pi * (self.pulley1.groove_radius + self.pulley2.groove_radius)

    def subtask(self, subtask_id: SubtaskId) -> SubtaskSpec:
        return self.subtask_s1 if subtask_id == "S1" else self.subtask_s2


# Shared defaults unless explicitly overridden.
default_belt = BeltModel()
default_bounds = Bounds.symmetric()
