"""
sim/assembly.py

Assembly-success detector for a settled chain belt.

A pulley counts as wrapped when its centre lies inside the belt polygon
projected onto the pulley's cross-section plane and at least two nodes sit
within groove-contact distance of its groove circle.  The assembly succeeds
when both pulleys are wrapped and the belt is under tension.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from matplotlib.path import Path

from core.params import Pulley, Scenario

if TYPE_CHECKING:
    from sim.chain import ChainBeltState

logger = logging.getLogger(__name__)

GROOVE_TOL = 0.006          # groove-contact distance [m]
MIN_GROOVE_NODES = 2


@dataclass(frozen=True)
class AssemblyOutcome:
    success:         bool
    wrapped_p1:      bool
    wrapped_p2:      bool
    final_tension:   float     # mean segment tension [N]
    max_penetration: float     # deepest pulley penetration seen during the run [m]
    dropped:         bool      # whole belt below both pulleys

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "wrapped_p1": self.wrapped_p1,
            "wrapped_p2": self.wrapped_p2,
            "final_tension_N": self.final_tension,
            "max_penetration_m": self.max_penetration,
            "dropped": self.dropped,
        }


def wraps(positions: np.ndarray, pulley: Pulley, groove_tol: float = GROOVE_TOL) -> bool:
    """True when the closed node polygon encloses *pulley* and touches its groove."""
    local = (positions - pulley.O) @ pulley.frame          # columns e1, e2, shaft
    polygon = Path(local[:, 0:2])
    inside = bool(polygon.contains_point((0.0, 0.0)))
    radial = np.hypot(local[:, 0], local[:, 1])
    near = (np.abs(radial - pulley.groove_radius) <= groove_tol) & \
           (np.abs(local[:, 2]) <= pulley.ellipsoid_semi_axes[2])
    return inside and int(near.sum()) >= MIN_GROOVE_NODES


def detect_success(
    state: "ChainBeltState",
    scenario: Scenario,
    *,
    max_penetration: float = 0.0,
    groove_tol: float = GROOVE_TOL,
) -> AssemblyOutcome:
    w1 = wraps(state.positions, scenario.pulley1, groove_tol)
    w2 = wraps(state.positions, scenario.pulley2, groove_tol)
    tension = float(state.segment_tensions().mean())
    floor = min(scenario.pulley1.O[2] - scenario.pulley1.flange_radius,
                scenario.pulley2.O[2] - scenario.pulley2.flange_radius)
    dropped = bool(np.all(state.positions[:, 2] < floor))
    outcome = AssemblyOutcome(
        success=bool(w1 and w2 and tension > 0.0),
        wrapped_p1=w1,
        wrapped_p2=w2,
        final_tension=tension,
        max_penetration=float(max_penetration),
        dropped=dropped,
    )
    logger.debug("assembly check: %s", outcome)
    return outcome
