import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

logger = logging.getLogger(__name__)

# Armijo sufficient-decrease constant and backtracking limit of the quasi-Newton line search
ARMIJO_C1 = 1e-4
MAX_HALVINGS = 60
# Above this size a sparse quadratic form is factorized with a sparse LU
DENSE_SOLVE_LIMIT = 2000

Matrix = Union[np.ndarray, scipy.sparse.spmatrix]


class DimensionError(ValueError):
    """Raised when an objective receives a vector of the wrong dimension."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a factorization finds a singular or indefinite matrix."""


class OptimizerStatus(str, Enum):
    CONVERGED = "converged"
    MAX_EVALS = "max_evals"
    STALLED = "stalled"
    NON_FINITE = "non_finite"

    @property
    def fatal(self) -> bool:
        return self is OptimizerStatus.NON_FINITE


@dataclass(frozen=True)
class QuadraticForm:
    """
    F(z) = 1/2 z^T A z - b^T z + c.

    Attributes:
        A (Matrix): Symmetric matrix, dense or scipy-sparse.
        b (np.ndarray): Linear term.
        c (float): Constant term.
    """
    A: Matrix
    b: np.ndarray
    c: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.b.shape[0])

    def value(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.A @ z) - self.b @ z + self.c)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(self.A @ np.asarray(z, dtype=float)).ravel() - self.b


class CountedObjective:
    """
    Black-box objective with an exact, thread-safe evaluation counter.

    Every call increments the counter by one before the wrapped function runs;
    only the counter update is serialized, evaluations may run concurrently.

    Args:
        func (Callable[[np.ndarray], float]): The objective.
        dim (Optional[int]): Expected input dimension, checked on every call when given.
        quadratic_form (Optional[QuadraticForm]): Exposed (A, b, c) when F is quadratic.
        name (str): Label used in log messages.
    """

    def __init__(self, func: Callable[[np.ndarray], float], dim: Optional[int] = None,
                 quadratic_form: Optional[QuadraticForm] = None, name: str = "F") -> None:
        self._func = func
        self._lock = threading.Lock()
        self._count = 0
        self.dim = dim
        self.quadratic_form = quadratic_form
        self.name = name

    @property
    def count(self) -> int:
        return self._count

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if self.dim is not None and x.shape != (self.dim,):
            raise DimensionError(f"{self.name} expects a vector of length {self.dim}, got shape {x.shape}")
        with self._lock:
            self._count += 1
        return float(self._func(x))

    def tally(self) -> None:
        """Count one evaluation of F whose value was obtained without calling the wrapped function."""
        with self._lock:
            self._count += 1


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Stopping and step controls shared by the reference optimizers.

    Attributes:
        tol_x (float): Stop when ||x_{t+1} - x_t||_inf <= tol_x (pattern search: step <= tol_x).
        max_evals (Optional[int]): Evaluation cap per optimizer call, None for unlimited.
        fd_step (float): Relative central-difference step, h_i = fd_step * max(1, |x_i|).
        initial_pattern_step (float): First poll step of pattern search.
        seed (int): Seed recorded for reproducibility; both optimizers are deterministic.
    """
    tol_x: float = 1e-6
    max_evals: Optional[int] = None
    fd_step: float = 1e-6
    initial_pattern_step: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.tol_x > 0:
            raise ValueError(f"tol_x must be positive, got {self.tol_x}")
        if self.max_evals is not None and self.max_evals < 1:
            raise ValueError(f"max_evals must be positive, got {self.max_evals}")
        if not self.fd_step > 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")
        if not self.initial_pattern_step > 0:
            raise ValueError(f"initial_pattern_step must be positive, got {self.initial_pattern_step}")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    initial_fun: float
    evals: int
    iterations: int
    status: OptimizerStatus
    message: str = field(default="")


class _BudgetExhausted(Exception):
    pass


class _Budget:
    """Counts the calls of one optimizer run and enforces max_evals."""

    def __init__(self, objective: CountedObjective, max_evals: Optional[int]) -> None:
        self.objective = objective
        self.max_evals = max_evals
        self.start = objective.count

    @property
    def used(self) -> int:
        return self.objective.count - self.start

    def __call__(self, x: np.ndarray) -> float:
        if self.max_evals is not None and self.used >= self.max_evals:
            raise _BudgetExhausted
        return self.objective(x)


def _check_start(objective: CountedObjective, x0: np.ndarray) -> np.ndarray:
    x0 = np.array(x0, dtype=float)
    if x0.ndim != 1:
        raise DimensionError(f"initial point must be a vector, got shape {x0.shape}")
    if objective.dim is not None and x0.shape[0] != objective.dim:
        raise DimensionError(f"{objective.name} has dimension {objective.dim}, initial point has {x0.shape[0]}")
    return x0


def finite_difference_gradient(objective: Callable[[np.ndarray], float], x: np.ndarray,
                               fd_step: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient with absolute steps h_i = fd_step * max(1, |x_i|).

    Costs exactly 2 * len(x) objective evaluations.
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    probe = x.copy()
    for i in range(x.size):
        h = fd_step * max(1.0, abs(x[i]))
        probe[i] = x[i] + h
        f_plus = objective(probe)
        probe[i] = x[i] - h
        f_minus = objective(probe)
        probe[i] = x[i]
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def minimize_quasi_newton(objective: CountedObjective, x0: np.ndarray,
                          config: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    """
    BFGS with Armijo backtracking and central finite-difference gradients.

    Stops when two consecutive accepted iterates differ by at most tol_x in
    max-norm. A line search that halves MAX_HALVINGS times without sufficient
    decrease ends the run with status "stalled" (or "non_finite" when the
    last trial value was not finite).

    Args:
        objective (CountedObjective): Function to minimize.
        x0 (np.ndarray): Starting point.
        config (OptimizerConfig): Tolerances and step controls.

    Returns:
        OptimizeResult: Best accepted point, its value and the evaluation count.
    """
    x = _check_start(objective, x0)
    budget = _Budget(objective, config.max_evals)
    f0 = f = np.nan
    iterations = 0
    try:
        f0 = f = budget(x)
        if not np.isfinite(f):
            return OptimizeResult(x, f, f0, budget.used, 0, OptimizerStatus.NON_FINITE,
                                  "objective is not finite at the starting point")
        g = finite_difference_gradient(budget, x, config.fd_step)
        if not np.all(np.isfinite(g)):
            return OptimizeResult(x, f, f0, budget.used, 0, OptimizerStatus.NON_FINITE,
                                  "finite-difference gradient is not finite")
        inverse_hessian = np.eye(x.size)
        scaled = False
        while True:
            direction = -inverse_hessian @ g
            slope = float(g @ direction)
            if slope >= 0.0:
                inverse_hessian = np.eye(x.size)
                direction = -g
                slope = float(-(g @ g))
            if slope == 0.0:
                return OptimizeResult(x, f, f0, budget.used, iterations, OptimizerStatus.CONVERGED,
                                      "zero gradient")
            alpha = 1.0
            trial_value = np.nan
            for _ in range(MAX_HALVINGS):
                trial = x + alpha * direction
                trial_value = budget(trial)
                if np.isfinite(trial_value) and trial_value <= f + ARMIJO_C1 * alpha * slope:
                    break
                alpha *= 0.5
            else:
                status = OptimizerStatus.STALLED if np.isfinite(trial_value) else OptimizerStatus.NON_FINITE
                return OptimizeResult(x, f, f0, budget.used, iterations, status,
                                      f"line search failed after {MAX_HALVINGS} halvings")
            step = trial - x
            x, f = trial, trial_value
            iterations += 1
            if np.max(np.abs(step)) <= config.tol_x:
                return OptimizeResult(x, f, f0, budget.used, iterations, OptimizerStatus.CONVERGED,
                                      "step below tol_x")
            g_new = finite_difference_gradient(budget, x, config.fd_step)
            if not np.all(np.isfinite(g_new)):
                return OptimizeResult(x, f, f0, budget.used, iterations, OptimizerStatus.NON_FINITE,
                                      "finite-difference gradient is not finite")
            y = g_new - g
            sy = float(step @ y)
            if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(y):
                if not scaled:
                    inverse_hessian = (sy / float(y @ y)) * np.eye(x.size)
                    scaled = True
                rho = 1.0 / sy
                hy = inverse_hessian @ y
                inverse_hessian += (rho * rho * float(y @ hy) + rho) * np.outer(step, step) \
                    - rho * (np.outer(hy, step) + np.outer(step, hy))
            g = g_new
    except _BudgetExhausted:
        logger.warning("%s: evaluation cap of %s reached after %d iterations",
                       objective.name, config.max_evals, iterations)
        return OptimizeResult(x, f, f0, budget.used, iterations, OptimizerStatus.MAX_EVALS,
                              "evaluation cap reached")


def minimize_pattern_search(objective: CountedObjective, x0: np.ndarray,
                            config: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    """
    Coordinate pattern search.

    Each poll evaluates x +/- step * e_i for every coordinate and moves to the
    best strictly improving point; a poll without improvement halves the step.
    The search stops when the step is at most tol_x. Non-finite trial values
    are treated as +inf.

    Args:
        objective (CountedObjective): Function to minimize.
        x0 (np.ndarray): Starting point.
        config (OptimizerConfig): Tolerances and the initial poll step.

    Returns:
        OptimizeResult: Best point found and the evaluation count.
    """
    x = _check_start(objective, x0)
    budget = _Budget(objective, config.max_evals)
    step = config.initial_pattern_step
    f0 = f = np.nan
    iterations = 0
    try:
        f0 = f = budget(x)
        if not np.isfinite(f):
            return OptimizeResult(x, f, f0, budget.used, 0, OptimizerStatus.NON_FINITE,
                                  "objective is not finite at the starting point")
        while step > config.tol_x:
            best_value, best_point = f, None
            trial = x.copy()
            for i in range(x.size):
                for sign in (1.0, -1.0):
                    trial[i] = x[i] + sign * step
                    value = budget(trial)
                    if np.isfinite(value) and value < best_value:
                        best_value, best_point = value, trial.copy()
                trial[i] = x[i]
            if best_point is None:
                step *= 0.5
            else:
                x, f = best_point, best_value
            iterations += 1
    except _BudgetExhausted:
        logger.warning("%s: evaluation cap of %s reached at poll step %.3g",
                       objective.name, config.max_evals, step)
        return OptimizeResult(x, f, f0, budget.used, iterations, OptimizerStatus.MAX_EVALS,
                              "evaluation cap reached")
    return OptimizeResult(x, f, f0, budget.used, iterations, OptimizerStatus.CONVERGED,
                          "poll step below tol_x")


OPTIMIZERS: Dict[str, Callable[[CountedObjective, np.ndarray, OptimizerConfig], OptimizeResult]] = {
    "quasi_newton": minimize_quasi_newton,
    "pattern_search": minimize_pattern_search,
}


def get_optimizer(name: str) -> Callable[[CountedObjective, np.ndarray, OptimizerConfig], OptimizeResult]:
    try:
        return OPTIMIZERS[name]
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}, expected one of {sorted(OPTIMIZERS)}") from None


def factorize_spd(A: Matrix) -> Callable[[np.ndarray], np.ndarray]:
    """
    Factorize a symmetric positive-definite matrix and return its solver.

    Dense (or small sparse) matrices use a Cholesky factorization; large sparse
    matrices use a sparse LU with symmetric ordering and no pivoting, whose
    pivots are all positive exactly when A is positive definite.

    Args:
        A (Matrix): Square symmetric matrix, dense or scipy-sparse.

    Returns:
        Callable[[np.ndarray], np.ndarray]: b -> A^{-1} b.

    Raises:
        DimensionError: If A is not square.
        NotPositiveDefiniteError: If A is not symmetric, singular or indefinite.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"matrix of shape {A.shape} is not square")
    if A.shape[0] == 0:
        return lambda rhs: np.zeros(0)
    asymmetry = abs(A - A.T).max()
    scale = max(1.0, abs(A).max())
    if asymmetry > 1e-10 * scale:
        raise NotPositiveDefiniteError(f"matrix is not symmetric (max asymmetry {asymmetry:.3g})")
    if scipy.sparse.issparse(A) and A.shape[0] > DENSE_SOLVE_LIMIT:
        try:
            lu = scipy.sparse.linalg.splu(
                scipy.sparse.csc_matrix(A),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as e:
            raise NotPositiveDefiniteError(f"sparse factorization failed: {e}") from e
        pivots = lu.U.diagonal()
        if not np.all(np.isfinite(pivots)) or np.any(pivots <= 0.0):
            raise NotPositiveDefiniteError("sparse factorization found a non-positive pivot")
        return lu.solve
    dense = A.toarray() if scipy.sparse.issparse(A) else np.asarray(A, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(dense, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NotPositiveDefiniteError(f"Cholesky factorization failed: {e}") from e
    return lambda rhs: scipy.linalg.cho_solve(factor, rhs)


def solve_quadratic_direct(A: Matrix, b: np.ndarray) -> np.ndarray:
    """
    Solve A x = b for a symmetric positive-definite A (minimizer of 1/2 x^T A x - b^T x).

    Does not evaluate any objective, so no evaluation counter is touched.

    Raises:
        DimensionError: If A does not match b.
        NotPositiveDefiniteError: If A is not symmetric, singular or indefinite.
    """
    b = np.asarray(b, dtype=float)
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"matrix of shape {A.shape} does not match right-hand side of length {b.shape[0]}")
    return np.asarray(factorize_spd(A)(b), dtype=float)
