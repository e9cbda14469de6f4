"""
core/scenarios.py
─────────────────
The four benchmark scenarios, their default subtask goals and the JSON
scenario file format.

P1 is fixed at O1 = [0.100, 0.550, 0.340] m; only the centre of P2 and the
belt circumference change between scenarios.  Both shafts point along world x.

File format
-----------
One JSON object, all lengths in metres and angles in radians::

    {
      "name": "scenario1",
      "belt_length_m": 0.4,
      "pulley1": {"center_m": [...], "groove_radius_m": 0.03,
                  "ellipsoid_semi_axes_m": [...], "axis": [1, 0, 0],
                  "groove_half_width_m": 0.004},
      "pulley2": {...},
      "belt": {"m1_kg": ..., "m2_kg": ..., "inertia_M1_kg_m2": ...,
               "k_p_N_per_m": ..., "k_d_N_s_per_m": ..., "rest_length_m": ...,
               "max_length_m": ..., "gravity_m_per_s2": ...},
      "initial_state": {"k1_pos_m": [...], "k2_pos_m": [...],
                        "k1_rpy_rad": [...], "qdot": [9 values]},
      "horizon_N": 300, "step_h_s": 0.05,
      "subtasks": {"S1": {...}, "S2": {...}}
    }

Everything except name, belt_length_m and the two pulley centres is
optional.  Missing belt entries follow BeltModel.for_loop, a missing initial
state is the hanging configuration below K1, and missing subtasks are filled
in by default_goals.  save_scenario always writes the complete document.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from core.dynamics import ForceContext, cable_length
from core.errors import ScenarioParseError
from core.params import (
    DEFAULT_HORIZON,
    DEFAULT_STEP,
    BeltModel,
    Bounds,
    KeypointConfig,
    Pulley,
    Scenario,
    SubtaskSpec,
    SystemState,
)

logger = logging.getLogger(__name__)

# ── Fixed geometry ─────────────────────────────────────────────────────────
O1 = (0.100, 0.550, 0.340)                  # [m]
P1_GROOVE_RADIUS = 0.030                    # [m]
P2_GROOVE_RADIUS = 0.015                    # [m]
P1_SEMI_AXES = (0.035, 0.035, 0.010)        # flange radius, flange radius, half width [m]
P2_SEMI_AXES = (0.020, 0.020, 0.010)
SHAFT_AXIS = (1.0, 0.0, 0.0)

# ── Per-scenario table: centre of P2 [m], belt circumference [m] ───────────
_LAYOUTS = (
    ((0.100, 0.680, 0.340), 0.4),
    ((0.100, 0.642, 0.432), 0.4),
    ((0.100, 0.645, 0.275), 0.4),
    ((0.100, 0.780, 0.340), 0.6),
)

# ── Goal construction constants ────────────────────────────────────────────
S1_K1_LIFT = 0.19                           # K1 above O1 at the end of S1 [m]
S1_K2_OFFSET = 0.32                         # K2 goal offset along −y [m]
S2_K1_CLEARANCE = 0.04                      # K1 beyond the groove of P2 [m]
S2_SWEEP = -math.pi / 4                     # K1 sweep below the O1→O2 line [rad]
S2_ROLL = -math.pi / 2
S2_YAW = math.pi / 2                        # simulation value; hardware used π/4

INITIAL_K1 = (0.0, 0.55, 0.50)              # grasp point in front of P1 [m]
INITIAL_DROP = 0.99                         # K2 hangs at 0.99·L below K1

Q_K1_POS, Q_K2_POS, Q_RPY, Q_VEL = 100.0, 0.0, 10.0, 1.0
R_INPUT = 1e-2
W_TENSION_S2 = 1.0


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of *v* about the unit *axis*."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1.0 - c)


def _weights() -> Tuple[tuple, tuple]:
    Q = (Q_K1_POS,) * 3 + (Q_K2_POS,) * 3 + (Q_RPY,) * 3 + (Q_VEL,) * 9
    return Q, (R_INPUT,) * 6


def _goal_specs(
    pulley1: Pulley,
    pulley2: Pulley,
    belt: BeltModel,
    horizon_N: int,
    step_h: float,
    bounds: Bounds,
    s2_yaw: float,
) -> Tuple[SubtaskSpec, SubtaskSpec]:
    O1v, O2v = pulley1.O, pulley2.O
    ez = np.array([0.0, 0.0, 1.0])
    ey = np.array([0.0, 1.0, 0.0])
    Q, R = _weights()

    # S1: K1 straight above P1, K2 pulled out along −y at the height of O1
    g1 = SystemState.at_rest(O1v + S1_K1_LIFT * ez, O1v - S1_K2_OFFSET * ey)
    s1 = SubtaskSpec("S1", g1, Q, R, 0.0, 0.0, horizon_N, step_h, bounds)

    # S2: K1 swept past P2, below the line of centres; K2 seated at the rim
    d = O2v - O1v
    d /= np.linalg.norm(d)
    d_rot = _rotate(d, np.asarray(pulley1.axis), S2_SWEEP)
    k1 = O2v + (pulley2.groove_radius + S2_K1_CLEARANCE) * d_rot
    k2 = O1v - pulley1.groove_radius * ez
    g2 = SystemState.at_rest(k1, k2, (S2_ROLL, 0.0, s2_yaw))

    l_goal = cable_length(g2, ForceContext("S2", pulley1))
    tension = max(0.0, belt.k_p * (l_goal - belt.rest_length_L))
    s2 = SubtaskSpec("S2", g2, Q, R, W_TENSION_S2, tension, horizon_N, step_h, bounds)
    return s1, s2


def default_goals(scenario: Scenario, s2_yaw: float = S2_YAW) -> Tuple[SubtaskSpec, SubtaskSpec]:
    """
    Default S1/S2 subtask specifications for *scenario*.

    S1 lifts K1 0.19 m above O1 and parks K2 at the height of O1; the K2
    position weights are zero.  S2 moves K1 0.04 m past the groove of P2,
    45° below the line O1→O2, with orientation [−π/2, 0, s2_yaw], and asks
    for the tension k_p·(l − L) the virtual cable has at that goal.

    Horizon, step and bounds are taken from scenario.subtask_s1.
    """
    ref = scenario.subtask_s1
    return _goal_specs(
        scenario.pulley1, scenario.pulley2, scenario.belt,
        ref.horizon_N, ref.step_h, ref.bounds, s2_yaw,
    )


def initial_state(belt: BeltModel, k1: Tuple[float, float, float] = INITIAL_K1) -> SystemState:
    """Configuration ρ0: K2 hanging slack straight below the grasp point."""
    k1v = np.asarray(k1, dtype=float)
    return SystemState.at_rest(k1v, k1v - np.array([0.0, 0.0, INITIAL_DROP * belt.rest_length_L]))


def make_scenario(
    name: str,
    o2: Tuple[float, float, float],
    belt_length: float,
    *,
    horizon_N: int = DEFAULT_HORIZON,
    step_h: float = DEFAULT_STEP,
    s2_yaw: float = S2_YAW,
    **belt_overrides,
) -> Scenario:
    p1 = Pulley(O1, P1_GROOVE_RADIUS, P1_SEMI_AXES, SHAFT_AXIS)
    p2 = Pulley(o2, P2_GROOVE_RADIUS, P2_SEMI_AXES, SHAFT_AXIS)
    belt = BeltModel.for_loop(belt_length, P1_GROOVE_RADIUS, **belt_overrides)
    s1, s2 = _goal_specs(p1, p2, belt, horizon_N, step_h, Bounds.symmetric(), s2_yaw)
    return Scenario(name, p1, p2, belt, belt_length, initial_state(belt), s1, s2)


def builtin_scenarios(horizon_N: int = DEFAULT_HORIZON, step_h: float = DEFAULT_STEP) -> List[Scenario]:
    """The four benchmark scenarios, index 0 … 3 ↔ scenario 1 … 4."""
    return [
        make_scenario(f"scenario{i + 1}", o2, length, horizon_N=horizon_N, step_h=step_h)
        for i, (o2, length) in enumerate(_LAYOUTS)
    ]


def with_horizon(scenario: Scenario, horizon_N: int, step_h: float | None = None) -> Scenario:
    """Copy of *scenario* whose two subtasks use a different horizon/step."""
    h = scenario.subtask_s1.step_h if step_h is None else step_h
    return replace(
        scenario,
        subtask_s1=replace(scenario.subtask_s1, horizon_N=horizon_N, step_h=h),
        subtask_s2=replace(scenario.subtask_s2, horizon_N=horizon_N, step_h=h),
    )


# ════════════════════════════════════════════════════════════════════════════
# JSON schema                                                                 #
# ════════════════════════════════════════════════════════════════════════════

_BELT_KEYS = {
    "m1_kg": "m1",
    "m2_kg": "m2",
    "inertia_M1_kg_m2": "inertia_M1",
    "k_p_N_per_m": "k_p",
    "k_d_N_s_per_m": "k_d",
    "rest_length_m": "rest_length_L",
    "max_length_m": "max_length_Lmax",
    "gravity_m_per_s2": "gravity_g",
}
_BOUND_KEYS = ("q_lower", "q_upper", "qdot_lower", "qdot_upper",
               "u_lower", "u_upper", "lam_lower", "lam_upper")


def _floats(v) -> list:
    return [float(a) for a in v]


def _pulley_to_json(p: Pulley) -> Dict[str, Any]:
    return {
        "center_m": _floats(p.center),
        "groove_radius_m": float(p.groove_radius),
        "ellipsoid_semi_axes_m": _floats(p.ellipsoid_semi_axes),
        "axis": _floats(p.axis),
        "groove_half_width_m": float(p.groove_half_width),
    }


def _state_to_json(s: SystemState) -> Dict[str, Any]:
    return {
        "k1_pos_m": _floats(s.q.k1_pos),
        "k2_pos_m": _floats(s.q.k2_pos),
        "k1_rpy_rad": _floats(s.q.k1_rpy),
        "qdot": _floats(s.qdot),
    }


def _spec_to_json(s: SubtaskSpec) -> Dict[str, Any]:
    return {
        "goal_state": _state_to_json(s.goal_state),
        "weight_Q": _floats(s.weight_Q),
        "weight_R": _floats(s.weight_R),
        "weight_w": float(s.weight_w),
        "desired_tension_N": float(s.desired_tension),
        "horizon_N": int(s.horizon_N),
        "step_h_s": float(s.step_h),
        "bounds": {k: _floats(getattr(s.bounds, k)) for k in _BOUND_KEYS},
    }


def scenario_to_dict(sc: Scenario) -> Dict[str, Any]:
    return {
        "name": sc.name,
        "belt_length_m": float(sc.belt_length),
        "pulley1": _pulley_to_json(sc.pulley1),
        "pulley2": _pulley_to_json(sc.pulley2),
        "belt": {key: float(getattr(sc.belt, attr)) for key, attr in _BELT_KEYS.items()},
        "initial_state": _state_to_json(sc.initial_state),
        "horizon_N": int(sc.subtask_s1.horizon_N),
        "step_h_s": float(sc.subtask_s1.step_h),
        "subtasks": {"S1": _spec_to_json(sc.subtask_s1), "S2": _spec_to_json(sc.subtask_s2)},
    }


def _pulley_from_json(d: Dict[str, Any], groove: float, axes: tuple) -> Pulley:
    return Pulley(
        center=tuple(d["center_m"]),
        groove_radius=float(d.get("groove_radius_m", groove)),
        ellipsoid_semi_axes=tuple(d.get("ellipsoid_semi_axes_m", axes)),
        axis=tuple(d.get("axis", SHAFT_AXIS)),
        groove_half_width=float(d.get("groove_half_width_m", 0.004)),
    )


def _state_from_json(d: Dict[str, Any]) -> SystemState:
    q = KeypointConfig(
        tuple(d["k1_pos_m"]), tuple(d["k2_pos_m"]), tuple(d.get("k1_rpy_rad", (0.0, 0.0, 0.0)))
    )
    return SystemState(q, tuple(d.get("qdot", (0.0,) * 9)))


def _spec_from_json(sid: str, d: Dict[str, Any]) -> SubtaskSpec:
    b = d["bounds"]
    return SubtaskSpec(
        id=sid,
        goal_state=_state_from_json(d["goal_state"]),
        weight_Q=tuple(d["weight_Q"]),
        weight_R=tuple(d["weight_R"]),
        weight_w=float(d.get("weight_w", 0.0)),
        desired_tension=float(d.get("desired_tension_N", 0.0)),
        horizon_N=int(d["horizon_N"]),
        step_h=float(d["step_h_s"]),
        bounds=Bounds(**{k: tuple(b[k]) for k in _BOUND_KEYS}),
    )


def scenario_from_dict(doc: Dict[str, Any]) -> Scenario:
    """
    Build a Scenario from a parsed JSON document.

    Structural problems (missing keys, wrong types) raise ScenarioParseError;
    values that parse but break a model invariant raise
    ScenarioValidationError from the type constructors.
    """
    try:
        name = str(doc["name"])
        belt_length = float(doc["belt_length_m"])
        p1 = _pulley_from_json(doc["pulley1"], P1_GROOVE_RADIUS, P1_SEMI_AXES)
        p2 = _pulley_from_json(doc["pulley2"], P2_GROOVE_RADIUS, P2_SEMI_AXES)
        overrides = {attr: float(doc["belt"][key])
                     for key, attr in _BELT_KEYS.items() if key in doc.get("belt", {})}
        belt = BeltModel.for_loop(belt_length, p1.groove_radius, **overrides)
        x0 = (_state_from_json(doc["initial_state"]) if "initial_state" in doc
              else initial_state(belt))
        horizon = int(doc.get("horizon_N", DEFAULT_HORIZON))
        step = float(doc.get("step_h_s", DEFAULT_STEP))
        if "subtasks" in doc:
            s1 = _spec_from_json("S1", doc["subtasks"]["S1"])
            s2 = _spec_from_json("S2", doc["subtasks"]["S2"])
        else:
            s1, s2 = _goal_specs(p1, p2, belt, horizon, step, Bounds.symmetric(), S2_YAW)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ScenarioParseError(f"scenario document does not follow the schema: {exc!r}") from exc
    return Scenario(name, p1, p2, belt, belt_length, x0, s1, s2)


def load_scenario(path: Union[str, Path]) -> Scenario:
    """
    Read and validate a scenario file.

    Raises
    ------
    ScenarioParseError
        Missing file, malformed JSON or a document outside the schema.
    ScenarioValidationError
        A value breaks a model invariant; the message names the invariant.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{path}: top level must be an object")
    scenario = scenario_from_dict(doc)
    logger.debug("loaded scenario %s from %s", scenario.name, path)
    return scenario


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    """Write the complete JSON document of *scenario* (sorted keys, 2-space indent)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def resolve_scenario(ref: str, search_dir: Union[str, Path, None] = None) -> Scenario:
    """
    Scenario by reference: "1" … "4" selects a built-in scenario, anything
    else is a path (tried as given, then relative to *search_dir*).
    """
    if ref.isdigit():
        idx = int(ref)
        table = builtin_scenarios()
        if not 1 <= idx <= len(table):
            raise ScenarioParseError(f"no built-in scenario {idx} (choose 1…{len(table)})")
        return table[idx - 1]
    p = Path(ref)
    if not p.exists() and search_dir is not None:
        p = Path(search_dir) / ref
    return load_scenario(p)
