import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.multiresolution import SUPPORTED_DEGREES, GridHierarchy, make_scheme
from core.mropt import (
    LevelRecord,
    MrOptConfig,
    MrOptReport,
    attach_reference,
    estimate_error_decay_rates,
    run_direct,
    run_mropt,
)
from core.optimizers import OptimizeResult, OptimizerConfig
from core.problems import PROBLEM_NAMES, ProblemInstance, make_problem, problem_dimension, smoothness_probe
from core.reporting import dump_limit_basis, dump_smoothness, dump_solution, emit_report, write_summary
from core.utils import create_output_folders, format_optional, solution_path

logger = logging.getLogger(__name__)

# Shared constants for the experiment pipeline
DEFAULT_OUTPUT_PATH = Path("./results")
OPTIMIZER_NAMES = ("quasi_newton", "pattern_search", "oracle")
MODES = ("mropt", "direct", "both")
QUADRATIC_PROBLEMS = ("bvp1d", "poisson2d")
# Desk-scale (j0, L) per problem
DESK_DEFAULTS: Dict[str, Tuple[int, int]] = {
    "bvp1d": (4, 5),
    "poisson2d": (4, 3),
    "mins": (4, 3),
    "morebv": (4, 3),
}

EXIT_OK = 0
EXIT_INVALID_SPEC = 1
EXIT_OPTIMIZER_FAILURE = 2
EXIT_IO_FAILURE = 3


class InvalidRunSpecError(ValueError):
    """Raised when a run specification violates a parameter constraint."""


def stage_done(stage: str) -> None:
    logger.info("Stage %s done", stage)


def stage_failed(stage: str) -> None:
    logger.error("Stage %s failed", stage)


def default_grid(problem: str, degree: int) -> Tuple[int, int]:
    """
    Desk-scale (j0, L) for a problem, coarsened-mesh adjusted so that j0 >= n.

    Each doubling of j0 removes one level, so J_L stays the same (degree 5 on
    bvp1d gives j0=8, L=4).
    """
    j0, levels = DESK_DEFAULTS[problem]
    while j0 < degree and levels > 0:
        j0, levels = 2 * j0, levels - 1
    return j0, levels


@dataclass(frozen=True)
class RunSpec:
    """
    One benchmark experiment.

    Attributes:
        problem (str): Problem name.
        n (int): Prediction degree.
        j0 (Optional[int]): Coarsest cell count, desk default when None.
        levels (Optional[int]): Number of refinements L, desk default when None.
        tol (float): tol_x of the optimizer and tol_m of the stopping rule.
        optimizer (str): quasi_newton, pattern_search or oracle.
        mode (str): mropt, direct or both.
        seed (int): Seed recorded with every output.
        out (Path): Output directory.
        dump_solutions (bool): Write every sub-optimal solution.
        dump_limit_basis (bool): Write samples of the coarse limit basis functions.
        dump_smoothness (bool): Write finite-difference derivative tables of the final solution.
        max_evals (Optional[int]): Evaluation cap per optimizer call.
    """
    problem: str = "bvp1d"
    n: int = 3
    j0: Optional[int] = None
    levels: Optional[int] = None
    tol: float = 1e-6
    optimizer: str = "pattern_search"
    mode: str = "mropt"
    seed: int = 0
    out: Path = DEFAULT_OUTPUT_PATH
    dump_solutions: bool = False
    dump_limit_basis: bool = False
    dump_smoothness: bool = False
    max_evals: Optional[int] = None

    def resolved(self) -> "RunSpec":
        """Copy with the desk-scale grid defaults filled in."""
        if self.j0 is not None and self.levels is not None:
            return self
        if self.problem not in DESK_DEFAULTS:
            return self
        j0, levels = default_grid(self.problem, self.n)
        if self.j0 is not None:
            j0 = self.j0
        if self.levels is not None:
            levels = self.levels
        return replace(self, j0=j0, levels=levels)

    def canonical(self) -> str:
        """Canonical spec string; the output path is excluded so reruns elsewhere are byte-identical."""
        spec = self.resolved()
        flags = {
            "problem": spec.problem,
            "n": spec.n,
            "j0": spec.j0,
            "levels": spec.levels,
            "tol": repr(float(spec.tol)),
            "optimizer": spec.optimizer,
            "mode": spec.mode,
            "seed": spec.seed,
            "max_evals": "none" if spec.max_evals is None else spec.max_evals,
            "dump_solutions": str(spec.dump_solutions).lower(),
            "dump_limit_basis": str(spec.dump_limit_basis).lower(),
            "dump_smoothness": str(spec.dump_smoothness).lower(),
        }
        return " ".join(f"{key}={value}" for key, value in flags.items())


def validate_run_spec(spec: RunSpec) -> RunSpec:
    """
    Check every parameter before anything runs.

    Args:
        spec (RunSpec): Specification as given by the user.

    Returns:
        RunSpec: The specification with grid defaults resolved.

    Raises:
        InvalidRunSpecError: Naming the first violated constraint.
    """
    if spec.problem not in PROBLEM_NAMES:
        raise InvalidRunSpecError(f"problem must be one of {list(PROBLEM_NAMES)}, got {spec.problem!r}")
    if spec.n not in SUPPORTED_DEGREES:
        raise InvalidRunSpecError(f"n must be one of {list(SUPPORTED_DEGREES)}, got {spec.n}")
    if spec.optimizer not in OPTIMIZER_NAMES:
        raise InvalidRunSpecError(f"optimizer must be one of {list(OPTIMIZER_NAMES)}, got {spec.optimizer!r}")
    if spec.mode not in MODES:
        raise InvalidRunSpecError(f"mode must be one of {list(MODES)}, got {spec.mode!r}")
    if not (math.isfinite(spec.tol) and spec.tol > 0):
        raise InvalidRunSpecError(f"tol must be a positive number, got {spec.tol}")
    if spec.seed < 0:
        raise InvalidRunSpecError(f"seed must be non-negative, got {spec.seed}")
    if spec.max_evals is not None and spec.max_evals < 1:
        raise InvalidRunSpecError(f"max_evals must be positive, got {spec.max_evals}")
    spec = spec.resolved()
    if spec.j0 < 1:
        raise InvalidRunSpecError(f"j0 must be a positive integer, got {spec.j0}")
    if spec.levels < 0:
        raise InvalidRunSpecError(f"levels must be non-negative, got {spec.levels}")
    if spec.levels > 0 and spec.j0 < spec.n:
        raise InvalidRunSpecError(f"j0 >= n is required for degree {spec.n} prediction, got j0={spec.j0}")
    if spec.optimizer == "oracle" and spec.problem not in QUADRATIC_PROBLEMS:
        raise InvalidRunSpecError(
            f"optimizer 'oracle' needs a quadratic problem {list(QUADRATIC_PROBLEMS)}, got {spec.problem!r}"
        )
    if spec.dump_smoothness and problem_dimension(spec.problem) != 2:
        raise InvalidRunSpecError(f"dump_smoothness needs a 2D problem, {spec.problem!r} is 1D")
    if spec.dump_smoothness and spec.j0 * 2 ** spec.levels < 4:
        raise InvalidRunSpecError("dump_smoothness needs J_L >= 4")
    return spec


def build_config(spec: RunSpec, problem: ProblemInstance) -> MrOptConfig:
    """MR/OPT settings for a validated spec on one problem instance."""
    oracle = spec.optimizer == "oracle"
    return MrOptConfig(
        scheme=make_scheme(spec.n),
        hierarchy=problem.hierarchy,
        tol_m=spec.tol,
        boundary_mask=problem.boundary_mask,
        optimizer="quasi_newton" if oracle else spec.optimizer,
        optimizer_config=OptimizerConfig(tol_x=spec.tol, max_evals=spec.max_evals, seed=spec.seed),
        oracle_mode=oracle,
    )


def direct_report(result: OptimizeResult, problem: ProblemInstance, oracle: bool) -> MrOptReport:
    """Single-level report of the direct baseline."""
    finest = problem.hierarchy.finest
    record = LevelRecord(
        level=finest,
        dof=int(problem.free_indices.size),
        evals=result.evals,
        step_norm=float(np.max(np.abs(result.x - problem.initial_guess))),
        objective=float(result.fun),
        perturbation_norm=float(np.max(np.abs(result.x - problem.initial_guess))),
        status=result.status,
        message=result.message,
    )
    return MrOptReport(
        records=[record],
        solutions=[problem.initial_guess.copy(), result.x],
        initial_objective=float(result.initial_fun),
        status=result.status,
        oracle=oracle,
    )


@dataclass
class ExperimentOutcome:
    exit_code: int
    report: Optional[MrOptReport] = None
    direct: Optional[OptimizeResult] = None
    paths: Dict[str, Path] = field(default_factory=dict)


def _solve(spec: RunSpec) -> Tuple[Optional[MrOptReport], Optional[OptimizeResult], ProblemInstance]:
    """Run the requested modes; in mode=both the two runs use independent problem instances."""
    hierarchy = GridHierarchy(j0=spec.j0, levels=spec.levels, dim=problem_dimension(spec.problem))

    def mropt_run() -> Tuple[MrOptReport, ProblemInstance]:
        problem = make_problem(spec.problem, hierarchy)
        return run_mropt(problem.objective, problem.initial_guess, build_config(spec, problem)), problem

    def direct_run() -> Tuple[OptimizeResult, ProblemInstance]:
        problem = make_problem(spec.problem, hierarchy)
        return run_direct(problem.objective, problem.initial_guess, build_config(spec, problem)), problem

    if spec.mode == "mropt":
        report, problem = mropt_run()
        return report, None, problem
    if spec.mode == "direct":
        direct, problem = direct_run()
        return None, direct, problem
    with ThreadPoolExecutor(max_workers=2) as executor:
        mropt_future = executor.submit(mropt_run)
        direct_future = executor.submit(direct_run)
        report, problem = mropt_future.result()
        direct, _ = direct_future.result()
    return report, direct, problem


def _summary(spec: RunSpec, report: MrOptReport, direct: Optional[OptimizeResult],
             problem: ProblemInstance, footer: Dict[str, Any]) -> Dict[str, Any]:
    summary: Dict[str, Any] = {
        "spec": spec.canonical(),
        "seed": spec.seed,
        "problem": spec.problem,
        "n": spec.n,
        "j0": spec.j0,
        "levels": spec.levels,
        "finest_cells": problem.hierarchy.cells(problem.hierarchy.finest),
        "oracle": report.oracle,
        "status": report.status.value,
        "total_evals": report.total_evals,
        "stopped_early": report.stopped_early,
        "objective_values": report.objective_values,
        "step_norms": report.step_norms,
        "evals_per_dof": [record.evals_per_dof for record in report.records],
        "decay_rates": report.decay_rates,
        "reference": problem.reference_label,
    }
    if problem.reference_solution is not None:
        summary["error_decay_rates"] = estimate_error_decay_rates(report, problem.reference_solution)
    if direct is not None:
        summary["direct_status"] = direct.status.value
    summary.update(footer)
    return summary


def _write_dumps(spec: RunSpec, report: MrOptReport, direct: Optional[OptimizeResult],
                 problem: ProblemInstance, paths: Dict[str, Path]) -> None:
    shape = problem.grid_shape
    if spec.dump_solutions:
        if spec.mode != "direct":
            for level, z in enumerate(report.solutions):
                dump_solution(z.reshape(shape), solution_path(paths["solutions"], level))
        if direct is not None:
            dump_solution(direct.x.reshape(shape), solution_path(paths["solutions"], None))
    if spec.dump_limit_basis:
        dump_limit_basis(make_scheme(spec.n), spec.j0, list(range(spec.j0 + 1)), max(spec.levels, 1),
                         paths["limit_basis"])
    if spec.dump_smoothness:
        final = report.solution if spec.mode != "direct" else direct.x
        dump_smoothness(smoothness_probe(final.reshape(shape)), paths["smoothness"])


def run_experiment(spec: RunSpec) -> ExperimentOutcome:
    """
    Run the complete experiment pipeline.
    If a step fails, notify the failure and stop with the matching exit code.
    """
    try:
        spec = validate_run_spec(spec)
        stage_done("validate")
    except InvalidRunSpecError as e:
        logger.error("Invalid run specification: %s", e)
        stage_failed("validate")
        return ExperimentOutcome(exit_code=EXIT_INVALID_SPEC)

    try:
        paths = create_output_folders(Path(spec.out), with_solutions=spec.dump_solutions)
        stage_done("folders")
    except OSError as e:
        logger.exception("Error creating output folders: %s", e)
        stage_failed("folders")
        return ExperimentOutcome(exit_code=EXIT_IO_FAILURE)

    logger.info("Running %s", spec.canonical())
    try:
        report, direct, problem = _solve(spec)
        stage_done("optimize")
    except Exception as e:
        logger.exception("Error during optimization: %s", e)
        stage_failed("optimize")
        return ExperimentOutcome(exit_code=EXIT_OPTIMIZER_FAILURE, paths=paths)

    oracle = spec.optimizer == "oracle"
    if report is None:
        report = direct_report(direct, problem, oracle)
    if problem.reference_solution is not None:
        attach_reference(report, problem.reference_solution)
    footer: Dict[str, Any] = {}
    if spec.mode == "both":
        ratio = report.total_evals / direct.evals if direct.evals else float("nan")
        footer = {"direct_evals": direct.evals, "eval_ratio": ratio}
        logger.info("MR/OPT evals=%d direct evals=%d ratio=%s",
                    report.total_evals, direct.evals, format_optional(ratio, digits=4))

    try:
        emit_report(report, paths["report"], spec.canonical(), spec.seed, extra_footer=footer)
        write_summary(paths["summary"], _summary(spec, report, direct, problem, footer))
        _write_dumps(spec, report, direct, problem, paths)
        stage_done("report")
    except OSError as e:
        logger.exception("Error writing results: %s", e)
        stage_failed("report")
        return ExperimentOutcome(exit_code=EXIT_IO_FAILURE, report=report, direct=direct, paths=paths)

    failed = report.status.fatal or (direct is not None and direct.status.fatal)
    if failed:
        logger.error("Optimizer failure, partial report written to %s", paths["report"])
        return ExperimentOutcome(exit_code=EXIT_OPTIMIZER_FAILURE, report=report, direct=direct, paths=paths)
    return ExperimentOutcome(exit_code=EXIT_OK, report=report, direct=direct, paths=paths)
