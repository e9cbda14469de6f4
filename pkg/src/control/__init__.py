"""
control/__init__.py
───────────────────
Public interface of the *control* package.

Exports
-------
* transcribe              – builds the sparse NLP of one subtask
* solve                   – σ-homotopy solve of a transcribed subtask
* solve_subtask_sequence  – S1 then S2, chained at the S1 terminal state
* plan                    – convenience helper: scenario → (S1, S2) solutions
"""

# --------------------------------------------------------------------------- #
# 1. Public symbols --------------------------------------------------------- #
# --------------------------------------------------------------------------- #
from .builder import (
    DecisionLayout,
    TranscribedNLP,
    contact_complementarity_rows,
    cost,
    elastic_complementarity_rows,
    nlp_gradients,
    path_constraint_rows,
    transcribe,
)
from .mpcc import (
    KKTReport,
    SolverOptions,
    TrajectorySolution,
    cold_start_guess,
    kkt_report,
    solve,
    solve_subtask_sequence,
    warm_start,
)
from .export import load_solution, save_solution

from typing import Optional, Tuple

from core.params import Scenario
from core.scenarios import with_horizon


# --------------------------------------------------------------------------- #
# 2. Convenience wrapper ---------------------------------------------------- #
# --------------------------------------------------------------------------- #
def plan(
    scenario: Scenario,
    N: Optional[int] = None,
    *,
    h: Optional[float] = None,
    opts: Optional[SolverOptions] = None,
) -> Tuple[TrajectorySolution, Optional[TrajectorySolution]]:
    """
    Plan both subtasks of *scenario*, optionally at another horizon.

    This is a thin wrapper around ``solve_subtask_sequence`` that hides the
    horizon bookkeeping; S2 is None when S1 did not converge.
    """
    if N is not None or h is not None:
        scenario = with_horizon(scenario, N or scenario.subtask_s1.horizon_N, h)
    return solve_subtask_sequence(scenario, opts=opts)
