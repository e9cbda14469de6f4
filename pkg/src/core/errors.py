"""
core/errors.py
──────────────
Exception hierarchy shared by every package.

Library code raises these; only the CLI and the experiment harness turn them
into exit codes or per-run statuses.
"""

from __future__ import annotations
from typing import Optional


class BeltOptError(Exception):
    """Base class of all errors raised by the planner."""


class ScenarioParseError(BeltOptError):
    """A scenario file could not be read or does not follow the schema."""


class ScenarioValidationError(BeltOptError, ValueError):
    """A model value violates one of its invariants."""

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        msg = invariant if not detail else f"{invariant}: {detail}"
        super().__init__(msg)


class SingularityError(BeltOptError, ArithmeticError):
    """A projection denominator vanished (two points coincide)."""

    def __init__(self, message: str, knot: Optional[int] = None):
        self.knot = knot
        if knot is not None:
            message = f"{message} (knot {knot})"
        super().__init__(message)


class LayoutError(BeltOptError):
    """Decision-vector layouts do not match or exceed the memory budget."""


class PreconditionError(BeltOptError, ValueError):
    """An operation was called with arguments outside its domain."""


class SimulationBlowUp(BeltOptError):
    """A forward simulation left the physically meaningful range."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} at t = {time:.4f} s")
