import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from core.multiresolution import SUPPORTED_DEGREES
from core.problems import PROBLEM_NAMES
from core.processing import DEFAULT_OUTPUT_PATH, MODES, OPTIMIZER_NAMES, RunSpec, run_experiment

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Command-line flags of the benchmark runner."""
    parser = argparse.ArgumentParser(
        description="Run MR/OPT coarse-to-fine optimization benchmarks and write CSV reports."
    )
    parser.add_argument("--problem", choices=PROBLEM_NAMES, default="bvp1d")
    parser.add_argument("--n", type=int, choices=SUPPORTED_DEGREES, default=3, help="prediction degree")
    parser.add_argument("--j0", type=int, default=None, help="coarsest cell count (desk default per problem)")
    parser.add_argument("--levels", type=int, default=None, help="number of refinements L")
    parser.add_argument("--tol", type=float, default=1e-6, help="tol_x of the optimizer and tol_m of MR/OPT")
    parser.add_argument("--optimizer", choices=OPTIMIZER_NAMES, default="pattern_search")
    parser.add_argument("--mode", choices=MODES, default="mropt")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUTPUT_PATH, help="output directory")
    parser.add_argument("--dump-solutions", action="store_true", help="write every sub-optimal solution")
    parser.add_argument("--dump-limit-basis", action="store_true", help="write coarse limit basis samples")
    parser.add_argument("--dump-smoothness", action="store_true", help="write derivative tables of the result")
    parser.add_argument("--max-evals", type=int, default=None, help="evaluation cap per optimizer call")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    return RunSpec(
        problem=args.problem,
        n=args.n,
        j0=args.j0,
        levels=args.levels,
        tol=args.tol,
        optimizer=args.optimizer,
        mode=args.mode,
        seed=args.seed,
        out=args.out,
        dump_solutions=args.dump_solutions,
        dump_limit_basis=args.dump_limit_basis,
        dump_smoothness=args.dump_smoothness,
        max_evals=args.max_evals,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Parse the flags, run one experiment and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    outcome = run_experiment(spec_from_args(args))
    if outcome.exit_code == 0:
        logger.info("Results written to %s", args.out)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
