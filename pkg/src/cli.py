"""
cli.py

Command-line front end.

    python src/cli.py scenarios list
    python src/cli.py solve --scenario 1 --subtask both --n 100 --out out/
    python src/cli.py simulate --solution out/scenario1_s1.json out/scenario1_s2.json --plant chain
    python src/cli.py experiment --scenario 3 --runs 10 --seed 7 --out out/exp3
    python src/cli.py check

Exit codes: 0 ok, 1 unexpected error or failed check, 2 usage, 3 scenario,
4 solver did not converge, 5 simulation blow-up, 6 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from control import SolverOptions, load_solution, save_solution, solve, transcribe
from control.export import ExportError, write_rows
from control.mpcc import cold_start_guess, solve_subtask_sequence
from core.errors import BeltOptError, ScenarioParseError, ScenarioValidationError, SimulationBlowUp
from core.scenarios import builtin_scenarios, load_scenario, resolve_scenario, with_horizon
from experiments.artifacts import emit_artifacts
from experiments.checks import CHECKS, run_checks
from experiments.montecarlo import ExperimentPlan, run_experiment
from sim import simulate_chain, simulate_reduced

logger = logging.getLogger("beltopt")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SCENARIO, EXIT_SOLVER, EXIT_BLOWUP, EXIT_IO = range(7)
SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


class _Parser(argparse.ArgumentParser):
    """Usage errors print help and leave with code 2 through SystemExit."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beltopt", description="Belt-drive assembly trajectory planning")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sc = sub.add_parser("scenarios", help="list available scenarios")
    sc.add_argument("action", choices=["list"])
    sc.add_argument("--dir", type=Path, default=SCENARIO_DIR, help="scenario file directory")

    so = sub.add_parser("solve", help="plan one or both subtasks")
    so.add_argument("--scenario", required=True, help="1..4 or a scenario JSON file")
    so.add_argument("--subtask", choices=["s1", "s2", "both"], default="both")
    so.add_argument("--n", type=int, default=None, help="knot intervals per subtask")
    so.add_argument("--h", type=float, default=None, help="time step [s]")
    so.add_argument("--backend", choices=["auglag", "ipopt"], default="auglag")
    so.add_argument("--out", type=Path, default=Path("out"))

    si = sub.add_parser("simulate", help="replay solution(s) on a plant")
    si.add_argument("--solution", type=Path, nargs="+", required=True, help="solution manifest(s), S1 first")
    si.add_argument("--plant", choices=["reduced", "chain"], default="reduced")
    si.add_argument("--hold", choices=["zoh", "foh"], default="zoh")
    si.add_argument("--out", type=Path, default=None)

    ex = sub.add_parser("experiment", help="seeded goal-sampling batch")
    ex.add_argument("--scenario", required=True)
    ex.add_argument("--runs", type=int, default=10)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--n", type=int, default=100)
    ex.add_argument("--h", type=float, default=0.05)
    ex.add_argument("--no-sim", action="store_true", help="skip the chain-plant replay")
    ex.add_argument("--no-figures", action="store_true")
    ex.add_argument("--out", type=Path, default=Path("out/experiment"))

    ch = sub.add_parser("check", help="run invariant self-tests")
    ch.add_argument("--only", nargs="+", choices=sorted(CHECKS), default=None)
    return p


# ──────────────────────────── Commands ─────────────────────────────────────

def _cmd_scenarios(args) -> int:
    for i, sc in enumerate(builtin_scenarios(), start=1):
        print(f"{i}  {sc.name:<12} O2={np.round(sc.pulley2.O, 3).tolist()}  P_belt={sc.belt_length:.3f} m")
    for path in sorted(Path(args.dir).glob("*.json")) if Path(args.dir).is_dir() else []:
        sc = load_scenario(path)
        print(f"   {path.name:<20} {sc.name}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    scenario = resolve_scenario(args.scenario, SCENARIO_DIR)
    if args.n is not None or args.h is not None:
        scenario = with_horizon(scenario, args.n or scenario.subtask_s1.horizon_N, args.h)
    opts = SolverOptions(backend=args.backend)

    if args.subtask == "both":
        sols = [s for s in solve_subtask_sequence(scenario, opts=opts) if s is not None]
    else:
        spec = scenario.subtask(args.subtask.upper())
        # S2 alone starts from the S1 goal configuration
        x0 = scenario.initial_state if spec.id == "S1" else scenario.subtask_s1.goal_state
        nlp = transcribe(scenario, spec, x0, sigma=opts.sigma_schedule[0])
        sols = [solve(nlp, cold_start_guess(nlp), opts)]

    for sol in sols:
        path = save_solution(sol, args.out, f"{scenario.name}_{sol.subtask_id.lower()}", scenario=scenario, opts=opts)
        print(f"{sol.subtask_id}: {sol.status}  violation={sol.max_violation:.2e}  "
              f"cost={sol.cost:.4f}  time={sol.wall_time:.1f} s  → {path}")
    expected = 2 if args.subtask == "both" else 1
    return EXIT_OK if len(sols) == expected and all(s.converged for s in sols) else EXIT_SOLVER


def _cmd_simulate(args) -> int:
    loaded = [load_solution(p) for p in args.solution]
    scenario = loaded[0][1]
    sols = [s for s, _ in loaded]

    if args.plant == "reduced":
        for sol in sols:
            trace = simulate_reduced(sol, scenario, hold=args.hold)
            err = np.abs(trace.states[-1, 0:6] - sol.states[-1, 0:6]).reshape(2, 3)
            print(f"{sol.subtask_id}: terminal K1 error {np.linalg.norm(err[0]):.4f} m, "
                  f"K2 error {np.linalg.norm(err[1]):.4f} m")
            if args.out is not None:
                header = ("t",) + tuple(f"x{i}" for i in range(18)) + ("lam0", "lam1")
                rows = (np.concatenate([[t], x, lam]) for t, x, lam in zip(trace.t, trace.states, trace.forces))
                write_rows(Path(args.out) / f"reduced_{sol.subtask_id.lower()}.csv", header, rows)
        return EXIT_OK

    _, outcome = simulate_chain(sols, scenario)
    print(json.dumps(outcome.to_dict(), indent=2, sort_keys=True))
    if args.out is not None:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "outcome.json").write_text(json.dumps(outcome.to_dict(), indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
        except OSError as exc:
            raise ExportError(f"cannot write {out / 'outcome.json'}: {exc}") from exc
    return EXIT_OK


def _cmd_experiment(args) -> int:
    plan = ExperimentPlan(args.scenario, runs=args.runs, rng_seed=args.seed,
                          horizon_N=args.n, step_h=args.h, simulate=not args.no_sim)
    scenario = resolve_scenario(args.scenario, SCENARIO_DIR)
    report = run_experiment(plan, scenario)
    emit_artifacts(report, args.out, figures=not args.no_figures)
    print(f"{report.scenario}: feasible {report.feasible_count}/{len(report.records)}, "
          f"success {report.success_count}/{len(report.records)}, solve time {report.timing_summary()}")
    return EXIT_OK


def _cmd_check(args) -> int:
    results = run_checks(args.only)
    for r in results:
        print(f"{'ok    ' if r.passed else 'FAILED'}  {r.name:<22} {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {
    "scenarios": _cmd_scenarios,
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "experiment": _cmd_experiment,
    "check": _cmd_check,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)-7s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except (ScenarioParseError, ScenarioValidationError) as exc:
        logger.error("scenario: %s", exc)
        return EXIT_SCENARIO
    except SimulationBlowUp as exc:
        logger.error("simulation: %s", exc)
        return EXIT_BLOWUP
    except (ExportError, OSError) as exc:
        logger.error("I/O: %s", exc)
        return EXIT_IO
    except BeltOptError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAIL
    except Exception:      # noqa: BLE001
        logger.exception("unexpected error")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(cli_main())
