"""
control/export.py
─────────────────
Solution files.

    <stem>.csv    one row per knot:  t, x[18], u[6], lam0, lam1
    <stem>.json   run manifest: status, options, per-stage diagnostics,
                  scenario document and an ISO-8601 creation time

Floats are written with repr(), so reading a CSV and writing it again gives
the same bytes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from control.mpcc import SolverOptions, StageDiagnostics, TrajectorySolution
from core.errors import BeltOptError
from core.params import Scenario
from core.scenarios import scenario_from_dict, scenario_to_dict

logger = logging.getLogger(__name__)

STATE_NAMES = (
    "K1x", "K1y", "K1z", "K2x", "K2y", "K2z", "roll", "pitch", "yaw",
    "dK1x", "dK1y", "dK1z", "dK2x", "dK2y", "dK2z", "droll", "dpitch", "dyaw",
)
INPUT_NAMES = ("Fx", "Fy", "Fz", "Mx", "My", "Mz")
FORCE_NAMES = ("lam0", "lam1")
COLUMNS = ("t",) + STATE_NAMES + INPUT_NAMES + FORCE_NAMES


class ExportError(BeltOptError):
    """A solution or artifact file could not be written or read."""


def fmt(v: float) -> str:
    return repr(float(v))


def finite_or_none(v: Any) -> Any:
    """JSON-safe float: NaN and ±inf become null."""
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_rows(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def read_rows(path: Union[str, Path]) -> Tuple[List[str], List[List[str]]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ExportError(f"{path} is empty")
    return rows[0], rows[1:]


def knot_rows(solution: TrajectorySolution, t0: float = 0.0):
    for t, x, u, lam in zip(solution.times + t0, solution.states, solution.inputs, solution.force_magnitudes):
        yield [t, *x, *u, *lam]


# ════════════════════════════════════════════════════════════════════════════
# CSV                                                                         #
# ════════════════════════════════════════════════════════════════════════════

def write_solution_csv(solution: TrajectorySolution, path: Union[str, Path]) -> Path:
    return write_rows(path, COLUMNS, knot_rows(solution))


def read_solution_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(times, states, inputs, forces) from a solution CSV."""
    header, rows = read_rows(path)
    if tuple(header) != COLUMNS:
        raise ExportError(f"{path}: unexpected columns {header[:4]}…")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(len(rows), len(COLUMNS))
    except ValueError as exc:
        raise ExportError(f"{path}: {exc}") from exc
    return data[:, 0], data[:, 1:19], data[:, 19:25], data[:, 25:27]


# ════════════════════════════════════════════════════════════════════════════
# Manifest                                                                    #
# ════════════════════════════════════════════════════════════════════════════

def diagnostics_to_list(stages: Sequence[StageDiagnostics]) -> list:
    return [{k: finite_or_none(v) for k, v in vars(d).items()} for d in stages]


def save_solution(
    solution: TrajectorySolution,
    out_dir: Union[str, Path],
    stem: str,
    *,
    scenario: Scenario,
    opts: Optional[SolverOptions] = None,
) -> Path:
    """Write <stem>.csv and <stem>.json into *out_dir*; returns the manifest path."""
    out = Path(out_dir)
    csv_path = write_solution_csv(solution, out / f"{stem}.csv")
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "subtask": solution.subtask_id,
        "status": solution.status,
        "horizon_N": solution.horizon_N,
        "step_h_s": solution.step_h,
        "sigma": solution.sigma,
        "penalty": finite_or_none(float(solution.penalty)),
        "max_violation": finite_or_none(float(solution.max_violation)),
        "cost": finite_or_none(float(solution.cost)),
        "wall_time_s": solution.wall_time,
        "csv": csv_path.name,
        "options": (opts or SolverOptions()).to_dict(),
        "stages": diagnostics_to_list(solution.diagnostics),
        "scenario": scenario_to_dict(scenario),
    }
    path = out / f"{stem}.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    logger.info("wrote %s and %s", csv_path, path)
    return path


def load_solution(manifest_path: Union[str, Path]) -> Tuple[TrajectorySolution, Scenario]:
    """Restore a TrajectorySolution and its Scenario from a manifest written by save_solution."""
    path = Path(manifest_path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ExportError(f"cannot read manifest {path}: {exc}") from exc
    try:
        _, X, U, L = read_solution_csv(path.parent / doc["csv"])
        stages = tuple(
            StageDiagnostics(**{k: (float("nan") if v is None else v) for k, v in s.items()})
            for s in doc.get("stages", [])
        )
        sol = TrajectorySolution(
            states=X, inputs=U, force_magnitudes=L, status=doc["status"],
            diagnostics=stages, subtask_id=doc["subtask"], step_h=float(doc["step_h_s"]),
            sigma=float(doc.get("sigma", 0.0)), penalty=float(doc.get("penalty") or 0.0),
        )
        scenario = scenario_from_dict(doc["scenario"])
    except (KeyError, TypeError) as exc:
        raise ExportError(f"{path}: incomplete manifest ({exc!r})") from exc
    return sol, scenario
