import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from core.multiresolution import GridError, GridHierarchy, PredictionScheme, prediction_matrix
from core.optimizers import (
    OPTIMIZERS,
    CountedObjective,
    OptimizeResult,
    OptimizerConfig,
    OptimizerStatus,
    QuadraticForm,
    factorize_spd,
    get_optimizer,
    solve_quadratic_direct,
)

logger = logging.getLogger(__name__)

# Auxiliary problems with more free unknowns than this skip the reduced quadratic form
FAST_PATH_MAX_DOF = 4096


class OracleUnavailableError(ValueError):
    """Raised when oracle mode is requested for an objective without a quadratic form."""


@dataclass(frozen=True)
class MrOptConfig:
    """
    Settings of one MR/OPT run.

    Attributes:
        scheme (PredictionScheme): Prediction operator used to lift coarse perturbations.
        hierarchy (GridHierarchy): Mesh ladder; the objective lives on its finest level.
        tol_m (float): Stop when ||z^{L,k+1} - z^{L,k}||_inf <= tol_m.
        boundary_mask (Optional[np.ndarray]): Boolean mask of pinned finest-level entries.
        optimizer (str): Name in the optimizer registry.
        optimizer_config (OptimizerConfig): Settings passed to every auxiliary solve.
        quadratic_fast_path (bool): Evaluate quadratic auxiliaries through (A_k, b_k, c_k).
        oracle_mode (bool): Solve quadratic auxiliaries by a direct linear solve.
        fast_path_max_dof (int): Largest auxiliary size for which the reduced form is built.
    """
    scheme: PredictionScheme
    hierarchy: GridHierarchy
    tol_m: float = 1e-6
    boundary_mask: Optional[np.ndarray] = field(default=None, compare=False)
    optimizer: str = "pattern_search"
    optimizer_config: OptimizerConfig = OptimizerConfig()
    quadratic_fast_path: bool = True
    oracle_mode: bool = False
    fast_path_max_dof: int = FAST_PATH_MAX_DOF

    def __post_init__(self) -> None:
        if not self.tol_m > 0:
            raise ValueError(f"tol_m must be positive, got {self.tol_m}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}, expected one of {sorted(OPTIMIZERS)}")
        self.hierarchy.check_scheme(self.scheme)
        if self.boundary_mask is not None:
            mask = np.asarray(self.boundary_mask, dtype=bool).ravel()
            if mask.size != self.finest_size:
                raise GridError(f"boundary mask has {mask.size} entries, the finest grid has {self.finest_size}")
            object.__setattr__(self, "boundary_mask", mask)

    @property
    def finest_size(self) -> int:
        return self.hierarchy.size(self.hierarchy.finest)


@dataclass
class LevelRecord:
    level: int
    dof: int
    evals: int
    step_norm: float
    objective: float
    perturbation_norm: float
    status: OptimizerStatus = OptimizerStatus.CONVERGED
    message: str = ""
    error_vs_reference: Optional[float] = None

    @property
    def evals_per_dof(self) -> float:
        return self.evals / self.dof if self.dof else 0.0


@dataclass
class MrOptReport:
    """
    Outcome of an MR/OPT run.

    Attributes:
        records (List[LevelRecord]): One record per executed level k.
        solutions (List[np.ndarray]): Sub-optimal solutions z^{L,0} .. z^{L,K+1}.
        initial_objective (float): F(z^{L,0}).
        stopped_early (bool): True when the step criterion fired before level L.
        status (OptimizerStatus): Worst optimizer status met during the run.
        oracle (bool): Auxiliary problems were solved by direct linear algebra (evals are 0).
        decay_rates (List[Optional[float]]): r_k for k = 1 .. K.
    """
    records: List[LevelRecord] = field(default_factory=list)
    solutions: List[np.ndarray] = field(default_factory=list)
    initial_objective: float = np.nan
    stopped_early: bool = False
    status: OptimizerStatus = OptimizerStatus.CONVERGED
    oracle: bool = False
    decay_rates: List[Optional[float]] = field(default_factory=list)

    @property
    def total_evals(self) -> int:
        return int(sum(record.evals for record in self.records))

    @property
    def solution(self) -> np.ndarray:
        return self.solutions[-1]

    @property
    def objective_values(self) -> List[float]:
        return [self.initial_objective] + [record.objective for record in self.records]

    @property
    def step_norms(self) -> List[float]:
        return [record.step_norm for record in self.records]

    def rate_for_level(self, level: int) -> Optional[float]:
        """r_k aligned with the record of level k; None for level 0 and undefined entries."""
        position = [record.level for record in self.records].index(level)
        return self.decay_rates[position - 1] if position >= 1 else None


@lru_cache(maxsize=32)
def prediction_operator(hierarchy: GridHierarchy, scheme: PredictionScheme, level: int) -> scipy.sparse.csr_matrix:
    """
    Sparse P_k^L from level k to the finest level.

    In 2D it is the Kronecker product of the 1D operator with itself, acting on
    row-major flattened grids.
    """
    top = hierarchy.finest
    one_d = scipy.sparse.csr_matrix(prediction_matrix(hierarchy.cells(level), scheme, top - level))
    one_d.eliminate_zeros()
    if hierarchy.dim == 1:
        return one_d
    return scipy.sparse.kron(one_d, one_d, format="csr")


def coarse_pinned_mask(mask: Optional[np.ndarray], hierarchy: GridHierarchy, level: int) -> np.ndarray:
    """
    Pinned entries of level k: a coarse node is pinned iff its image on the
    finest grid is pinned.
    """
    if mask is None:
        return np.zeros(hierarchy.size(level), dtype=bool)
    stride = hierarchy.stride(level, hierarchy.finest)
    grid = np.asarray(mask, dtype=bool).reshape(hierarchy.shape(hierarchy.finest))
    if hierarchy.dim == 1:
        return grid[::stride].copy()
    return grid[::stride, ::stride].ravel()


def free_prediction_operator(config: MrOptConfig, level: int) -> Tuple[scipy.sparse.csr_matrix, np.ndarray]:
    """Return (P_k^L restricted to the free columns, free coarse indices)."""
    free = np.flatnonzero(~coarse_pinned_mask(config.boundary_mask, config.hierarchy, level))
    operator = prediction_operator(config.hierarchy, config.scheme, level)
    return operator[:, free], free


def reduce_quadratic(form: QuadraticForm, z_current: np.ndarray, level: int, config: MrOptConfig,
                     check: bool = True) -> QuadraticForm:
    """
    Quadratic form of the level-k auxiliary objective.

    A_k = P^T A P, b_k = P^T (b - A z), c_k = F(z), with P the prediction
    operator restricted to the unmasked coarse unknowns.

    Args:
        form (QuadraticForm): (A, b, c) of F on the finest grid.
        z_current (np.ndarray): z^{L,k}.
        level (int): Level k.
        config (MrOptConfig): Run settings (scheme, hierarchy, mask).
        check (bool): Factorize A_k to verify positive definiteness.

    Returns:
        QuadraticForm: (A_k, b_k, c_k).

    Raises:
        NotPositiveDefiniteError: If check is set and A_k is not positive definite.
    """
    operator, _ = free_prediction_operator(config, level)
    A = scipy.sparse.csr_matrix(form.A) if not scipy.sparse.issparse(form.A) else form.A
    reduced_matrix = (operator.T @ A @ operator).tocsr()
    reduced_matrix = 0.5 * (reduced_matrix + reduced_matrix.T)
    reduced = QuadraticForm(
        A=reduced_matrix.tocsr(),
        b=np.asarray(operator.T @ (form.b - A @ z_current)).ravel(),
        c=form.value(z_current),
    )
    if check:
        factorize_spd(reduced.A)
    return reduced


class AuxiliaryObjective(CountedObjective):
    """
    F_k(eps) = F(z^{L,k} + P_k^L eps) over the free coarse unknowns of level k.

    Every call counts exactly one evaluation of F. With a reduced quadratic
    form the value comes from (A_k, b_k, c_k) and F is only tallied;
    otherwise the call is forwarded to F.
    """

    def __init__(self, objective: CountedObjective, z_current: np.ndarray, operator: scipy.sparse.csr_matrix,
                 free: np.ndarray, level: int, reduced: Optional[QuadraticForm] = None) -> None:
        self.base = objective
        self.z_current = np.array(z_current, dtype=float)
        self.operator = operator
        self.free = free
        self.level = level
        self.reduced = reduced
        func = self._reduced if reduced is not None else self._lifted
        super().__init__(func, dim=free.size, quadratic_form=reduced, name=f"{objective.name}_{level}")

    def _lifted(self, eps: np.ndarray) -> float:
        return self.base(self.z_current + self.operator @ eps)

    def _reduced(self, eps: np.ndarray) -> float:
        self.base.tally()
        return self.reduced.value(eps)

    def prolongate(self, eps: np.ndarray) -> np.ndarray:
        """Finest-level perturbation P_k^L eps."""
        return np.asarray(self.operator @ np.asarray(eps, dtype=float)).ravel()


def build_auxiliary_objective(objective: CountedObjective, z_current: np.ndarray, level: int,
                              config: MrOptConfig, use_fast_path: bool = False) -> AuxiliaryObjective:
    """
    Build the level-k auxiliary objective around z^{L,k}.

    Args:
        objective (CountedObjective): F on the finest grid.
        z_current (np.ndarray): z^{L,k}.
        level (int): Level k, 0 <= k <= L.
        config (MrOptConfig): Run settings.
        use_fast_path (bool): Evaluate through the reduced quadratic form when F exposes one.

    Returns:
        AuxiliaryObjective: Counted objective over the free coarse unknowns.
    """
    z_current = np.asarray(z_current, dtype=float)
    if z_current.shape != (config.finest_size,):
        raise GridError(f"z has shape {z_current.shape}, the finest grid has {config.finest_size} entries")
    operator, free = free_prediction_operator(config, level)
    reduced = None
    if use_fast_path and objective.quadratic_form is not None:
        reduced = reduce_quadratic(objective.quadratic_form, z_current, level, config, check=False)
    return AuxiliaryObjective(objective, z_current, operator, free, level, reduced)


def _use_fast_path(objective: CountedObjective, dof: int, config: MrOptConfig) -> bool:
    if not config.quadratic_fast_path or objective.quadratic_form is None:
        return False
    if dof > config.fast_path_max_dof:
        logger.warning("Level auxiliary with %d unknowns exceeds fast_path_max_dof=%d, evaluating F directly",
                       dof, config.fast_path_max_dof)
        return False
    return True


def _solve_level(objective: CountedObjective, z_current: np.ndarray, level: int,
                 config: MrOptConfig) -> Tuple[np.ndarray, LevelRecord, OptimizeResult]:
    """Solve one auxiliary problem and return (finest perturbation, record)."""
    operator, free = free_prediction_operator(config, level)
    dof = int(free.size)
    if config.oracle_mode:
        reduced = reduce_quadratic(objective.quadratic_form, z_current, level, config, check=False)
        eps = solve_quadratic_direct(reduced.A, reduced.b)
        result = OptimizeResult(x=eps, fun=reduced.value(eps), initial_fun=reduced.c, evals=0,
                                iterations=1, status=OptimizerStatus.CONVERGED, message="direct solve")
        step = np.asarray(operator @ eps).ravel()
    else:
        aux = build_auxiliary_objective(objective, z_current, level, config,
                                        use_fast_path=_use_fast_path(objective, dof, config))
        result = get_optimizer(config.optimizer)(aux, np.zeros(dof), config.optimizer_config)
        step = aux.prolongate(result.x)
    record = LevelRecord(
        level=level,
        dof=dof,
        evals=result.evals,
        step_norm=float(np.max(np.abs(step))) if step.size else 0.0,
        objective=float(result.fun),
        perturbation_norm=float(np.max(np.abs(result.x))) if dof else 0.0,
        status=result.status,
        message=result.message,
    )
    return step, record, result


def _check_run(objective: CountedObjective, z0: np.ndarray, config: MrOptConfig) -> np.ndarray:
    z0 = np.array(z0, dtype=float)
    if z0.shape != (config.finest_size,):
        raise GridError(f"z0 has shape {z0.shape}, the finest grid has {config.finest_size} entries")
    if config.oracle_mode and objective.quadratic_form is None:
        raise OracleUnavailableError(f"oracle mode needs a quadratic form, {objective.name} does not expose one")
    return z0


def run_mropt(objective: CountedObjective, z0: np.ndarray, config: MrOptConfig,
              on_level: Optional[Callable[[LevelRecord], None]] = None) -> MrOptReport:
    """
    Coarse-to-fine MR/OPT sweep.

    For k = 0..L the level-k auxiliary problem is solved from eps = 0 and
    z^{L,k+1} = z^{L,k} + P_k^L eps_k^*. The sweep stops as soon as a step is
    at most tol_m, or when an optimizer returns a fatal status (the report is
    then partial).

    Args:
        objective (CountedObjective): F on the finest grid.
        z0 (np.ndarray): z^{L,0}, consistent with the pinned values.
        config (MrOptConfig): Run settings.
        on_level (Optional[Callable[[LevelRecord], None]]): Called after every level.

    Returns:
        MrOptReport: Per-level records, sub-optimal solutions and decay rates.

    Raises:
        OracleUnavailableError: If oracle mode is set and F exposes no quadratic form.
        GridError: If z0 does not match the finest grid.
    """
    z = _check_run(objective, z0, config)
    report = MrOptReport(solutions=[z.copy()], oracle=config.oracle_mode)
    if config.oracle_mode:
        report.initial_objective = objective.quadratic_form.value(z)
    for level in range(config.hierarchy.finest + 1):
        step, record, result = _solve_level(objective, z, level, config)
        if level == 0 and not config.oracle_mode:
            report.initial_objective = float(result.initial_fun)
        report.records.append(record)
        if record.status.fatal:
            logger.error("Level %d: optimizer returned %s (%s), stopping with a partial report",
                         level, record.status.value, record.message)
            report.status = record.status
            break
        if record.status is not OptimizerStatus.CONVERGED:
            logger.warning("Level %d: optimizer returned %s (%s), continuing",
                           level, record.status.value, record.message)
            report.status = record.status
        z = z + step
        report.solutions.append(z.copy())
        logger.info("Level %d: dof=%d evals=%d step=%.3e F=%.10g",
                    level, record.dof, record.evals, record.step_norm, record.objective)
        if on_level is not None:
            on_level(record)
        if record.dof and record.step_norm <= config.tol_m:
            report.stopped_early = level < config.hierarchy.finest
            if report.stopped_early:
                logger.info("Step %.3e <= tol_m=%.3g at level %d, skipping the remaining levels",
                            record.step_norm, config.tol_m, level)
            break
    report.decay_rates = estimate_decay_rates(report)
    return report


def run_direct(objective: CountedObjective, z0: np.ndarray, config: MrOptConfig) -> OptimizeResult:
    """
    Baseline: one optimizer call on the free finest-level unknowns.

    Returns:
        OptimizeResult: x is the full finest-level vector.
    """
    z = _check_run(objective, z0, config)
    step, record, result = _solve_level(objective, z, config.hierarchy.finest, config)
    logger.info("Direct solve: dof=%d evals=%d status=%s F=%.10g",
                record.dof, record.evals, record.status.value, record.objective)
    return OptimizeResult(x=z + step, fun=result.fun, initial_fun=result.initial_fun, evals=result.evals,
                          iterations=result.iterations, status=result.status, message=result.message)


def decay_rates_from_steps(steps: Sequence[float]) -> List[Optional[float]]:
    """log2(s_{k-1} / s_k) for k = 1.. len(steps) - 1; None where a norm is zero or not finite."""
    rates: List[Optional[float]] = []
    for k in range(1, len(steps)):
        previous, current = steps[k - 1], steps[k]
        if previous > 0.0 and current > 0.0 and np.isfinite(previous) and np.isfinite(current):
            rates.append(float(np.log2(previous / current)))
        else:
            logger.warning("Decay rate at level %d is undefined (norms %.3g, %.3g)", k, previous, current)
            rates.append(None)
    return rates


def estimate_decay_rates(report: MrOptReport) -> List[Optional[float]]:
    """
    r_k = log2(||z^{L,k} - z^{L,k-1}||_inf / ||z^{L,k+1} - z^{L,k}||_inf) for k = 1..K.

    Returns an empty list when fewer than three sub-optimal solutions exist.
    """
    return decay_rates_from_steps(report.step_norms)


def reference_errors(report: MrOptReport, reference: np.ndarray) -> List[float]:
    """||z_min - z^{L,k+1}||_inf for every executed level."""
    reference = np.asarray(reference, dtype=float)
    return [float(np.max(np.abs(reference - z))) for z in report.solutions[1:]]


def estimate_error_decay_rates(report: MrOptReport, reference: np.ndarray) -> List[Optional[float]]:
    """log2 ratios of successive ||z_min - z^{L,l+1}||_inf, for l = 1..K."""
    return decay_rates_from_steps(reference_errors(report, reference))


def attach_reference(report: MrOptReport, reference: np.ndarray) -> MrOptReport:
    """Fill error_vs_reference of every record in place and return the report."""
    for record, error in zip(report.records, reference_errors(report, reference)):
        record.error_vs_reference = error
    return report
