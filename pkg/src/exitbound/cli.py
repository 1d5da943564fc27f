"""Console entry point.

    exitbound <command> <scenario.scn> [--workers N] [--out DIR] [--seed S]

Commands: solve-pde, simulate, verify-bound, convergence.  Exit codes:
0 success, 2 bound violation, 3 invalid scenario or arguments, 4 numerical
failure (censoring, solver breakdown, failed cross-check).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import bound as bnd
from . import expr as ex
from . import geometry as geo
from . import pde, pipeline
from .scenario import ScenarioError, load_scenario

__all__ = ["main"]

COMMANDS = {
    "solve-pde": pipeline.cmd_solve_pde,
    "simulate": pipeline.cmd_simulate,
    "verify-bound": pipeline.cmd_verify_bound,
    "convergence": pipeline.cmd_convergence,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitbound",
        description=(
            "Verify the exit-time perturbation bound for a coupled pair of "
            "diffusions described by a scenario file."
        ),
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("scenario", help="path to a .scn scenario file")
    parser.add_argument(
        "--workers",
        type=int,
        default=1,
        help="worker processes for replicate batches (results do not depend on this)",
    )
    parser.add_argument(
        "--out",
        default=None,
        help="artifact directory (default: $EXITBOUND_OUT or ./exitbound_out)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="override the scenario's base seed",
    )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = args.out or os.environ.get("EXITBOUND_OUT") or "exitbound_out"
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 3
    try:
        scn = load_scenario(args.scenario)
        return COMMANDS[args.command](scn, Path(out), args.workers, args.seed)
    except (bnd.NumericalFailure, pde.SolverError, pde.CoefficientError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4
    except (ScenarioError, ex.ExprError, pde.GridError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
