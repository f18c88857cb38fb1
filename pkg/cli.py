"""
Command-line front end.

Usage:
  python cli.py verify configs/scalar_decay.json
  python cli.py simulate configs/scalar_decay.json --from 0 --to 5 --init "1.0"
  python cli.py transition configs/scalar_decay.json --t 2 --s 0
  python cli.py bounded configs/bounded_sine.json
  python cli.py conjugate configs/block_perturbed.json --t 0 --state "0.5, 1" --stage all
  python cli.py check-conjugacy configs/block_perturbed.json --grid 3
  python cli.py gronwall configs/scalar_decay.json --from 0 --to 5 --init "1" --expr "0.2"

Exit codes: 0 success, 1 usage or runtime error, 2 a named hypothesis failed.
"""

import sys
import json
import time
import logging
import argparse
from dataclasses import asdict
from typing import Iterable, List, Optional

import colorama
import numpy as np
from colorama import Fore, Style

from config import LOG_LEVEL, config_hash, load_config
from conjugacy import TOWARD_LINEAR, TOWARD_NONLINEAR, Linearization, conjugacy_report
from models import BlockSystem, ConditionViolation, DepcagError, LoadedConfig
from schemas import RunReport
from solve import bounded_solution, solve_ivp
from transition import TransitionOperator
from verify import HypothesisReport, block_transition, gronwall_check, verify_system

# Initialize colorama for colored terminal output
colorama.init(autoreset=True)

logger = logging.getLogger("depcag")

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS = 0, 1, 2


def status(message: str, color: str = Fore.WHITE):
    print(f"{color}{message}{Style.RESET_ALL}", file=sys.stderr)


def parse_state(text: str) -> np.ndarray:
    """'1, 2.5' or '[1, 2.5]' -> array."""
    cleaned = text.strip().strip("[]()")
    parts = [p for p in cleaned.replace(",", " ").split() if p]
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise DepcagError(f"cannot read state {text!r}; expected comma separated numbers") from None


def format_row(values: Iterable[float]) -> str:
    return ",".join(f"{float(v):.17g}" for v in values)


def emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
        status(f"💾 Wrote {out}", Fore.CYAN)
    else:
        print(text)


def nonlinear_system(loaded: LoadedConfig):
    system = loaded.system
    return system.full_system() if isinstance(system, BlockSystem) else system


def numerics_for(loaded: LoadedConfig, args):
    return loaded.numerics.with_overrides(seed=args.seed, threads=args.threads)


def run_report(command: str, args, numerics, report: HypothesisReport, results: Optional[dict] = None) -> RunReport:
    return RunReport(
        command=command,
        config_hash=config_hash(args.config),
        seed=numerics.seed,
        numerics=asdict(numerics),
        checks=report.checks,
        constants=report.constants,
        notes=report.notes,
        results=results or {},
    )


def report_json(report: RunReport) -> str:
    return json.dumps(report.model_dump(by_alias=True), sort_keys=True, indent=2)


def summarize(report: HypothesisReport) -> int:
    for name, entry in sorted(report.checks.items()):
        if entry.passed:
            logger.debug(f"{name}: pass")
        else:
            status(f"❌ {name} failed: {entry.inequality} (lhs={entry.lhs}, rhs={entry.rhs})", Fore.RED)
    if report.passed:
        status(f"✅ All {len(report.checks)} checks passed", Fore.GREEN)
        return EXIT_OK
    status(f"⚠️ Failed: {', '.join(report.failures())}", Fore.YELLOW)
    return EXIT_HYPOTHESIS


# Subcommands

def cmd_verify(args) -> int:
    loaded = load_config(args.config, validate=False)
    loaded = LoadedConfig(loaded.system, loaded.dichotomy, numerics_for(loaded, args), loaded.raw)
    report = verify_system(loaded)
    emit(report_json(run_report("verify", args, loaded.numerics, report)), args.out)
    return summarize(report)


def cmd_simulate(args) -> int:
    loaded = load_config(args.config)
    numerics = numerics_for(loaded, args)
    system = nonlinear_system(loaded)
    traj = solve_ivp(system, args.start, parse_state(args.init), args.end, numerics)
    times, values = traj.rows()
    header = "t," + ",".join(f"z{k + 1}" for k in range(system.dim))
    rows = [format_row([t, *v]) for t, v in zip(times, values)]
    emit("\n".join([header] + rows), args.out)
    status(f"✅ {len(rows)} rows from t={args.start} to t={args.end}", Fore.GREEN)
    return EXIT_OK


def cmd_transition(args) -> int:
    loaded = load_config(args.config)
    numerics = numerics_for(loaded, args)
    if isinstance(loaded.system, BlockSystem):
        matrix = block_transition(loaded.system, numerics).transition(args.t, args.s)
    else:
        matrix = TransitionOperator(loaded.system.linear_part(), numerics).transition_z(args.t, args.s)
    emit("\n".join(format_row(row) for row in matrix), args.out)
    return EXIT_OK


def cmd_bounded(args) -> int:
    loaded = load_config(args.config)
    numerics = numerics_for(loaded, args)
    system = nonlinear_system(loaded)
    span = (args.start, args.end) if args.start is not None and args.end is not None else None
    solution = bounded_solution(system, loaded.dichotomy, numerics, span=span)
    lo, hi = solution.core
    phi = solution.phi0
    keep = (phi.times >= lo) & (phi.times <= hi)
    header = "t," + ",".join(f"z{k + 1}" for k in range(system.dim))
    rows = [format_row([t, *v]) for t, v in zip(phi.times[keep], phi.values[keep])]
    emit("\n".join([header] + rows), args.out)
    status(f"✅ Bounded solution: sup|phi0|={solution.sup_norm:.6g} <= sigma={solution.sigma:.6g}, "
           f"residual={solution.residual:.3e}, {solution.iterations} sweeps, core=[{lo:.6g}, {hi:.6g}]",
           Fore.GREEN)
    if solution.probe_defect is not None:
        status(f"🔎 Uniqueness probe defect {solution.probe_defect:.3e}", Fore.CYAN)
    return EXIT_OK


def _block_config(args) -> LoadedConfig:
    loaded = load_config(args.config)
    if not isinstance(loaded.system, BlockSystem):
        raise DepcagError(f"{args.command} needs a block system config")
    return loaded


def cmd_conjugate(args) -> int:
    loaded = _block_config(args)
    numerics = numerics_for(loaded, args)
    engine = Linearization(loaded.system, loaded.dichotomy, numerics)
    direction = TOWARD_NONLINEAR if args.inverse else TOWARD_LINEAR
    image = engine.conjugacy_map(args.stage, direction)(args.t, parse_state(args.state))
    emit(format_row(image), args.out)
    return EXIT_OK


def cmd_check_conjugacy(args) -> int:
    loaded = _block_config(args)
    numerics = numerics_for(loaded, args)
    report = conjugacy_report(loaded.system, loaded.dichotomy, numerics, grid_points=args.grid, t0=args.t)
    emit(report_json(run_report("check-conjugacy", args, numerics, report, {"grid": args.grid})), args.out)
    return summarize(report)


def cmd_gronwall(args) -> int:
    loaded = load_config(args.config)
    numerics = numerics_for(loaded, args)
    system = nonlinear_system(loaded)
    traj = solve_ivp(system, args.start, parse_state(args.init), args.end, numerics)
    report = gronwall_check(traj, args.expr, system.constants, samples=numerics.samples)
    emit(report_json(run_report("gronwall", args, numerics, report, {"expr": args.expr})), args.out)
    return summarize(report)


COMMANDS = {
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "transition": cmd_transition,
    "bounded": cmd_bounded,
    "conjugate": cmd_conjugate,
    "check-conjugacy": cmd_check_conjugacy,
    "gronwall": cmd_gronwall,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", help="JSON system config")
    common.add_argument("--config", dest="config_flag", help="JSON system config (alternative to the positional)")
    common.add_argument("--seed", type=int, help="sampling seed (default from config, else 0)")
    common.add_argument("--threads", type=int, help="worker threads for sampling checks")
    common.add_argument("--out", help="write CSV/JSON here instead of stdout")
    common.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = argparse.ArgumentParser(prog="depcag", description="DEPCAG transition, bounded-solution and conjugacy toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("verify", parents=[common], help="check every hypothesis and print a JSON report")

    s = sub.add_parser("simulate", parents=[common], help="solve an initial value problem, CSV rows t,z1..")
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="end", type=float, required=True)
    s.add_argument("--init", required=True, help='initial state, e.g. "1, 0"')

    s = sub.add_parser("transition", parents=[common], help="transition matrix Z(t, s) as CSV")
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--s", type=float, required=True)

    s = sub.add_parser("bounded", parents=[common], help="unique bounded solution on the core window, CSV")
    s.add_argument("--from", dest="start", type=float)
    s.add_argument("--to", dest="end", type=float)

    s = sub.add_parser("conjugate", parents=[common], help="image of a state under a conjugacy map")
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--state", required=True)
    s.add_argument("--inverse", action="store_true", help="map toward the nonlinear system")
    s.add_argument("--stage", choices=["6", "7", "all"], default="all")

    s = sub.add_parser("check-conjugacy", parents=[common], help="round-trip and dynamics defects as JSON")
    s.add_argument("--grid", type=int, default=5, help="states per axis")
    s.add_argument("--t", type=float, default=0.0, help="base time")

    s = sub.add_parser("gronwall", parents=[common], help="Gronwall-type inequality on a simulated trajectory")
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="end", type=float, required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--expr", required=True, help="eta(t) as an expression in t")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    args.config = args.config or args.config_flag
    if not args.config:
        status("❌ a config file is required", Fore.RED)
        return EXIT_ERROR

    logging.basicConfig(level=(args.log_level or LOG_LEVEL).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except ConditionViolation as e:
        status(f"❌ {e}", Fore.RED)
        code = EXIT_HYPOTHESIS
    except DepcagError as e:
        status(f"❌ {e}", Fore.RED)
        code = EXIT_ERROR
    except (OSError, ValueError) as e:
        status(f"❌ {e}", Fore.RED)
        code = EXIT_ERROR
    status(f"⏱️ {args.command} finished in {time.perf_counter() - started:.2f}s", Fore.CYAN)
    return code


if __name__ == "__main__":
    sys.exit(main())
