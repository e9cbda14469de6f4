"""
experiments/artifacts.py

Experiment output files
────────────────────────
    report.json         plan, goal means, per-run records, aggregate counts
    runs.csv            one row per run
    run_<k>.csv         knot trajectory of run k (S1 then S2, one time axis)
    run_<k>_k1.svg      K1 reference vs simulated, per position component
    run_<k>_forces.svg  planned force magnitudes λ̄0, λ̄1 over time
    timing.json         per-subtask wall clock, "mean±sd[s]"

Wall-clock numbers only go to timing.json, so report.json and runs.csv are
byte-identical for the same plan and seed.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from control.export import COLUMNS, ExportError, finite_or_none, knot_rows, write_rows
from control.mpcc import TrajectorySolution
from experiments.montecarlo import ExperimentReport, RunRecord

logger = logging.getLogger(__name__)

RUN_COLUMNS = (
    "run", "goal_s1_x", "goal_s1_y", "goal_s1_z", "goal_s2_x", "goal_s2_y", "goal_s2_z",
    "status_s1", "status_s2", "feasible", "violation", "cost",
    "success", "wrapped_p1", "wrapped_p2", "final_tension_N", "max_penetration_m", "dropped", "error",
)
SVG_RC = {"svg.hashsalt": "beltopt", "svg.fonttype": "none"}


# ──────────────────────────── Figures ──────────────────────────────────────

def k1_tracking_figure(t: np.ndarray, reference: np.ndarray, simulated: Optional[np.ndarray] = None):
    """Three panels (x, y, z of K1) in metres over seconds."""
    fig, axes = plt.subplots(3, 1, figsize=(6, 6), sharex=True)
    for i, (ax, name) in enumerate(zip(axes, "xyz")):
        ax.plot(t, reference[:, i], color="C0", label="reference")
        if simulated is not None:
            ax.plot(t, simulated[:, i], color="C1", ls="--", label="simulated")
        ax.set_ylabel(f"K1 {name} [m]")
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("Time [s]")
    fig.tight_layout()
    return fig


def force_figure(t: np.ndarray, forces: np.ndarray):
    """λ̄0 and λ̄1 in newtons over seconds."""
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(t, forces[:, 0], color="C0", label="cable tension λ̄0")
    ax.plot(t, forces[:, 1], color="C3", label="pulley contact λ̄1")
    ax.set_xlabel("Time [s]")
    ax.set_ylabel("Force [N]")
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def concatenated(solutions: Sequence[Optional[TrajectorySolution]]):
    """(t, states, forces) of consecutive subtasks on one time axis."""
    t, X, L = [], [], []
    offset = 0.0
    for sol in (s for s in solutions if s is not None):
        t.append(sol.times + offset)
        X.append(sol.states)
        L.append(sol.force_magnitudes)
        offset += sol.horizon_N * sol.step_h
    return np.concatenate(t), np.vstack(X), np.vstack(L)


def _save_svg(fig, path: Path) -> Path:
    try:
        with plt.rc_context(SVG_RC):
            fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


# ──────────────────────────── Report documents ─────────────────────────────

def _outcome_dict(r: RunRecord) -> Optional[dict]:
    if r.outcome is None:
        return None
    return {k: finite_or_none(v) for k, v in r.outcome.to_dict().items()}


def record_to_dict(r: RunRecord) -> dict:
    return {
        "run": r.index,
        "goal_s1_m": [finite_or_none(float(v)) for v in r.goal_s1],
        "goal_s2_m": [finite_or_none(float(v)) for v in r.goal_s2],
        "status_s1": r.status_s1,
        "status_s2": r.status_s2,
        "feasible": r.feasible,
        "violation": finite_or_none(float(r.violation)),
        "cost": finite_or_none(float(r.cost)),
        "success": r.success,
        "outcome": _outcome_dict(r),
        "error": r.error,
    }


def report_to_dict(report: ExperimentReport) -> dict:
    plan = report.plan
    return {
        "scenario": report.scenario,
        "plan": {
            "scenario_id": plan.scenario_id,
            "runs": plan.runs,
            "rng": "numpy Philox4x64, SeedSequence([seed, run])",
            "rng_seed": plan.rng_seed,
            "goal_noise_cov_m2": list(plan.goal_noise_cov),
            "horizon_N": plan.horizon_N,
            "step_h_s": plan.step_h,
            "simulate": plan.simulate,
            "options": plan.opts.to_dict(),
        },
        "goal_means_m": {"S1": [float(v) for v in report.mean_s1],
                         "S2": [float(v) for v in report.mean_s2]},
        "aggregates": {
            "runs": len(report.records),
            "feasible": report.feasible_count,
            "success": report.success_count,
        },
        "records": [record_to_dict(r) for r in report.records],
    }


def _run_row(r: RunRecord) -> list:
    o = r.outcome
    outcome_cells = ["", "", "", "", "", ""] if o is None else [
        str(o.success), str(o.wrapped_p1), str(o.wrapped_p2), o.final_tension, o.max_penetration, str(o.dropped),
    ]
    return [str(r.index), *r.goal_s1, *r.goal_s2, r.status_s1, r.status_s2, str(r.feasible),
            r.violation, r.cost, *outcome_cells, r.error or ""]


def _write_json(doc: dict, path: Path) -> Path:
    try:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


# ──────────────────────────── Entry point ──────────────────────────────────

def emit_artifacts(report: ExperimentReport, out_dir: Union[str, Path], *, figures: bool = True) -> List[Path]:
    """
    Write every experiment file into *out_dir* and return their paths.

    Raises
    ------
    ExportError
        On any I/O failure, with the offending path in the message.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {out}: {exc}") from exc

    written = [_write_json(report_to_dict(report), out / "report.json")]
    written.append(write_rows(out / "runs.csv", RUN_COLUMNS, (_run_row(r) for r in report.records)))

    for r in report.records:
        if not r.solutions:
            continue
        stem = f"run_{r.index:03d}"
        rows, offset = [], 0.0
        for sol in r.solutions:
            # the seam knot of S2 repeats the last S1 knot
            part = list(knot_rows(sol, offset))
            rows += part if not rows else part[1:]
            offset += sol.horizon_N * sol.step_h
        written.append(write_rows(out / f"{stem}.csv", COLUMNS, rows))
        if not figures:
            continue
        t, X, L = concatenated(r.solutions)
        if r.k1_trace is not None:
            tk, ref, sim = r.k1_trace
            fig = k1_tracking_figure(tk, ref, sim)
        else:
            fig = k1_tracking_figure(t, X[:, 0:3])
        written.append(_save_svg(fig, out / f"{stem}_k1.svg"))
        written.append(_save_svg(force_figure(t, L), out / f"{stem}_forces.svg"))

    times = report.solve_times()
    timing = {
        "solve_time": report.timing_summary(),
        "solve_time_mean_s": float(times.mean()) if times.size else None,
        "solve_time_sd_s": float(times.std()) if times.size else None,
        "per_run_s": {str(r.index): list(r.solve_time) for r in report.records},
    }
    written.append(_write_json(timing, out / "timing.json"))
    logger.info("wrote %d files to %s", len(written), out)
    return written
