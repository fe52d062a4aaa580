import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse

from core.multiresolution import GridError, GridHierarchy
from core.optimizers import (
    CountedObjective,
    OptimizerConfig,
    QuadraticForm,
    minimize_quasi_newton,
    solve_quadratic_direct,
)
from core.tensor import Grid2Data

logger = logging.getLogger(__name__)

PROBLEM_NAMES = ("bvp1d", "poisson2d", "mins", "morebv")
MOREBV_REFERENCE_TOL = 1e-10


@dataclass
class ProblemInstance:
    """
    One benchmark problem on the finest grid of a hierarchy.

    Vectors are full finest-level grids (boundary entries included), flattened
    row-major in 2D.

    Attributes:
        name (str): Problem name.
        hierarchy (GridHierarchy): The mesh ladder.
        objective (CountedObjective): F over finest-level full-grid vectors.
        initial_guess (np.ndarray): z^{L,0}.
        boundary_mask (np.ndarray): Boolean mask of the pinned finest-level entries.
        reference_solution (Optional[np.ndarray]): Minimizer when one is available.
        reference_label (Optional[str]): "direct solve" or "numerical reference".
    """
    name: str
    hierarchy: GridHierarchy
    objective: CountedObjective
    initial_guess: np.ndarray
    boundary_mask: np.ndarray
    reference_solution: Optional[np.ndarray] = None
    reference_label: Optional[str] = None

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return self.hierarchy.shape(self.hierarchy.finest)

    @property
    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)


def _require_dim(hierarchy: GridHierarchy, dim: int, name: str) -> None:
    if hierarchy.dim != dim:
        raise GridError(f"{name} is a {dim}D problem, got a {hierarchy.dim}D hierarchy")


def boundary_mask(hierarchy: GridHierarchy) -> np.ndarray:
    """Pinned finest-level entries: both end points in 1D, the boundary ring in 2D."""
    mask = np.zeros(hierarchy.shape(hierarchy.finest), dtype=bool)
    if hierarchy.dim == 1:
        mask[[0, -1]] = True
    else:
        mask[[0, -1], :] = True
        mask[:, [0, -1]] = True
    return mask.ravel()


def _embedding(mask: np.ndarray) -> scipy.sparse.csr_matrix:
    """Sparse injection of the free unknowns into the full grid vector."""
    free = np.flatnonzero(~mask)
    return scipy.sparse.csr_matrix(
        (np.ones(free.size), (free, np.arange(free.size))), shape=(mask.size, free.size)
    )


def _second_difference(size: int) -> scipy.sparse.csr_matrix:
    return scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(size, size), format="csr")


def bvp1d_source(t: np.ndarray) -> np.ndarray:
    """f(t) = 1e6 t(1-t)(t-1/2)(t-1/4)(3/4-t)."""
    t = np.asarray(t, dtype=float)
    return 1e6 * t * (1.0 - t) * (t - 0.5) * (t - 0.25) * (0.75 - t)


def poisson2d_source(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """f(x, y) = sin(4 pi x(1-x) y(1-y))."""
    return np.sin(4.0 * np.pi * np.asarray(x) * (1.0 - np.asarray(x)) * np.asarray(y) * (1.0 - np.asarray(y)))


def _quadratic_instance(name: str, hierarchy: GridHierarchy, interior_matrix: scipy.sparse.spmatrix,
                        interior_rhs: np.ndarray, energy: Callable[[np.ndarray], float]) -> ProblemInstance:
    mask = boundary_mask(hierarchy)
    embed = _embedding(mask)
    form = QuadraticForm(
        A=(embed @ interior_matrix @ embed.T).tocsr(),
        b=embed @ interior_rhs,
        c=0.0,
    )
    size = mask.size
    reference = embed @ solve_quadratic_direct(interior_matrix.tocsc(), interior_rhs)
    objective = CountedObjective(energy, dim=size, quadratic_form=form, name=name)
    logger.debug("%s: %d unknowns, %d pinned", name, size - int(mask.sum()), int(mask.sum()))
    return ProblemInstance(
        name=name,
        hierarchy=hierarchy,
        objective=objective,
        initial_guess=np.zeros(size),
        boundary_mask=mask,
        reference_solution=reference,
        reference_label="direct solve",
    )


def make_bvp1d(hierarchy: GridHierarchy) -> ProblemInstance:
    """
    -u'' + 2u = f on (0, 1), u(0) = u(1) = 0, as the quadratic energy of its
    three-point discretization.

    The interior matrix is tridiagonal with 2J^2 + 2 on the diagonal and -J^2
    off it; the right-hand side samples f at the interior nodes.
    """
    _require_dim(hierarchy, 1, "bvp1d")
    cells = hierarchy.cells(hierarchy.finest)
    nodes = hierarchy.nodes(hierarchy.finest)
    rhs = bvp1d_source(nodes[1:-1])
    matrix = cells ** 2 * _second_difference(cells - 1) + 2.0 * scipy.sparse.identity(cells - 1, format="csr")
    source = bvp1d_source(nodes)

    def energy(z: np.ndarray) -> float:
        inner = z[1:-1]
        operator = (-z[:-2] + 2.0 * inner - z[2:]) * cells ** 2 + 2.0 * inner
        return float(0.5 * inner @ operator - source[1:-1] @ inner)

    return _quadratic_instance("bvp1d", hierarchy, matrix, rhs, energy)


def make_poisson2d(hierarchy: GridHierarchy) -> ProblemInstance:
    """
    -(u_xx + u_yy) = f on the unit square with homogeneous Dirichlet data,
    discretized with the 5-point Laplacian (center 4J^2, neighbours -J^2).
    """
    _require_dim(hierarchy, 2, "poisson2d")
    cells = hierarchy.cells(hierarchy.finest)
    nodes = hierarchy.nodes(hierarchy.finest)
    inner = cells - 1
    second = _second_difference(inner)
    eye = scipy.sparse.identity(inner, format="csr")
    matrix = (cells ** 2 * (scipy.sparse.kron(eye, second) + scipy.sparse.kron(second, eye))).tocsr()
    y, x = np.meshgrid(nodes, nodes, indexing="ij")
    source = poisson2d_source(x, y)
    rhs = source[1:-1, 1:-1].ravel()
    side = cells + 1

    def energy(z: np.ndarray) -> float:
        grid = z.reshape(side, side)
        center = grid[1:-1, 1:-1]
        laplacian = (4.0 * center - grid[:-2, 1:-1] - grid[2:, 1:-1] - grid[1:-1, :-2] - grid[1:-1, 2:]) * cells ** 2
        return float(0.5 * np.sum(center * laplacian) - np.sum(source[1:-1, 1:-1] * center))

    return _quadratic_instance("poisson2d", hierarchy, matrix, rhs, energy)


def minimal_surface_area(grid: np.ndarray) -> float:
    """
    Area of the piecewise-linear surface over the triangulated square grid.

    Each cell is split along the diagonal from (x_i, y_j) to (x_{i+1}, y_{j+1});
    rows of `grid` are y nodes and columns are x nodes.
    """
    cells = grid.shape[0] - 1
    a = cells * (grid[1:, :-1] - grid[:-1, :-1])
    b = cells * (grid[1:, 1:] - grid[1:, :-1])
    c = cells * (grid[1:, 1:] - grid[:-1, 1:])
    d = cells * (grid[:-1, 1:] - grid[:-1, :-1])
    return float(np.sum(np.sqrt(1.0 + a * a + b * b) + np.sqrt(1.0 + c * c + d * d)) / (2.0 * cells ** 2))


def make_mins(hierarchy: GridHierarchy) -> ProblemInstance:
    """
    Minimal surface over the unit square with u0 = x(1-x) on y in {0, 1} and 0 on x in {0, 1}.

    The initial guess x(1-x) on every row already satisfies the boundary data.
    """
    _require_dim(hierarchy, 2, "mins")
    nodes = hierarchy.nodes(hierarchy.finest)
    side = nodes.size
    initial = np.tile(nodes * (1.0 - nodes), (side, 1))
    objective = CountedObjective(
        lambda z: minimal_surface_area(z.reshape(side, side)), dim=side * side, name="mins"
    )
    return ProblemInstance(
        name="mins",
        hierarchy=hierarchy,
        objective=objective,
        initial_guess=initial.ravel(),
        boundary_mask=boundary_mask(hierarchy),
    )


def morebv_residuals(grid: np.ndarray) -> np.ndarray:
    """Interior residuals (4z - neighbours) + (z + x + y + 1)^3 / (2J^2)."""
    cells = grid.shape[0] - 1
    nodes = np.linspace(0.0, 1.0, cells + 1)[1:-1]
    shift = nodes[:, None] + nodes[None, :] + 1.0
    center = grid[1:-1, 1:-1]
    stencil = 4.0 * center - grid[:-2, 1:-1] - grid[2:, 1:-1] - grid[1:-1, :-2] - grid[1:-1, 2:]
    return stencil + (center + shift) ** 3 / (2.0 * cells ** 2)


def make_morebv(hierarchy: GridHierarchy) -> ProblemInstance:
    """
    Sum of squared residuals of the discrete nonlinear boundary value problem
    -(u_xx + u_yy) + (u + x + y + 1)^3 / 2 = 0 with zero boundary data.
    """
    _require_dim(hierarchy, 2, "morebv")
    side = hierarchy.points(hierarchy.finest)
    objective = CountedObjective(
        lambda z: float(np.sum(morebv_residuals(z.reshape(side, side)) ** 2)), dim=side * side, name="morebv"
    )
    return ProblemInstance(
        name="morebv",
        hierarchy=hierarchy,
        objective=objective,
        initial_guess=np.zeros(side * side),
        boundary_mask=boundary_mask(hierarchy),
    )


@lru_cache(maxsize=8)
def morebv_numerical_reference(hierarchy: GridHierarchy) -> np.ndarray:
    """
    High-accuracy numerical minimizer of MOREBV, computed once per hierarchy.

    Quasi-Newton on the interior unknowns at tol 1e-10, starting from zero.
    The result is a numerical reference, not an exact solution.
    """
    problem = make_morebv(hierarchy)
    side = hierarchy.points(hierarchy.finest)
    free = problem.free_indices

    def interior_objective(x: np.ndarray) -> float:
        z = np.zeros(side * side)
        z[free] = x
        return problem.objective(z)

    result = minimize_quasi_newton(
        CountedObjective(interior_objective, dim=free.size, name="morebv-reference"),
        np.zeros(free.size),
        OptimizerConfig(tol_x=MOREBV_REFERENCE_TOL),
    )
    logger.info("MOREBV numerical reference: status=%s F=%.6g evals=%d",
                result.status.value, result.fun, result.evals)
    reference = np.zeros(side * side)
    reference[free] = result.x
    reference.flags.writeable = False
    return reference


PROBLEMS: Dict[str, Tuple[Callable[[GridHierarchy], ProblemInstance], int]] = {
    "bvp1d": (make_bvp1d, 1),
    "poisson2d": (make_poisson2d, 2),
    "mins": (make_mins, 2),
    "morebv": (make_morebv, 2),
}


def problem_dimension(name: str) -> int:
    if name not in PROBLEMS:
        raise ValueError(f"unknown problem {name!r}, expected one of {list(PROBLEM_NAMES)}")
    return PROBLEMS[name][1]


def make_problem(name: str, hierarchy: GridHierarchy, with_reference: bool = False) -> ProblemInstance:
    """
    Build a benchmark problem by name.

    Args:
        name (str): One of PROBLEM_NAMES.
        hierarchy (GridHierarchy): Mesh ladder of the matching dimension.
        with_reference (bool): Attach the MOREBV numerical reference (expensive).

    Returns:
        ProblemInstance: The problem on the finest grid of the hierarchy.

    Raises:
        ValueError: If the name is unknown.
        GridError: If the hierarchy dimension does not match the problem.
    """
    problem_dimension(name)
    factory, _ = PROBLEMS[name]
    problem = factory(hierarchy)
    if with_reference and name == "morebv":
        problem.reference_solution = np.array(morebv_numerical_reference(hierarchy))
        problem.reference_label = "numerical reference"
    return problem


@dataclass
class SmoothnessTables:
    """
    Finite-difference derivative tables on the full grid; entries without a
    centered stencil are NaN.
    """
    third_diff_x: np.ndarray
    third_diff_y: np.ndarray
    second_diff_x: np.ndarray
    second_diff_y: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {
            "third_diff_x": self.third_diff_x,
            "third_diff_y": self.third_diff_y,
            "second_diff_x": self.second_diff_x,
            "second_diff_y": self.second_diff_y,
        }


def _along_x(grid: np.ndarray, cells: int) -> Tuple[np.ndarray, np.ndarray]:
    second = np.full_like(grid, np.nan)
    third = np.full_like(grid, np.nan)
    second[:, 1:-1] = (grid[:, 2:] - 2.0 * grid[:, 1:-1] + grid[:, :-2]) * cells ** 2
    third[:, 2:-2] = (grid[:, 4:] - 2.0 * grid[:, 3:-1] + 2.0 * grid[:, 1:-3] - grid[:, :-4]) * cells ** 3 / 2.0
    return second, third


def smoothness_probe(z) -> SmoothnessTables:
    """
    Centered finite-difference approximations of the second and third partial
    derivatives of 2D grid data, scaled by h^-2 and h^-3.

    Args:
        z (Grid2Data | np.ndarray): Square grid, rows indexed by y.

    Returns:
        SmoothnessTables: Full-grid tables padded with NaN near the edges.

    Raises:
        GridError: If the grid has fewer than 4 cells per direction.
    """
    grid = z.values if isinstance(z, Grid2Data) else np.asarray(z, dtype=float)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise GridError(f"2D grid data must be square, got shape {grid.shape}")
    cells = grid.shape[0] - 1
    if cells < 4:
        raise GridError(f"smoothness probe needs J >= 4, got J={cells}")
    second_x, third_x = _along_x(grid, cells)
    second_y, third_y = _along_x(grid.T, cells)
    return SmoothnessTables(
        third_diff_x=third_x,
        third_diff_y=third_y.T,
        second_diff_x=second_x,
        second_diff_y=second_y.T,
    )
