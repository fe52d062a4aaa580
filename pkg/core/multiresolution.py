import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SUPPORTED_DEGREES = (1, 3, 5)

# Deslauriers-Dubuc interior weights beta_1..beta_{(n+1)/2}
_INTERIOR_WEIGHTS: Dict[int, Tuple[Fraction, ...]] = {
    1: (Fraction(1, 2),),
    3: (Fraction(9, 16), Fraction(-1, 16)),
    5: (Fraction(150, 256), Fraction(-25, 256), Fraction(3, 256)),
}

# One-sided rows at the left end, for fine odd indices 1, 3, ...
_LEFT_BOUNDARY_ROWS: Dict[int, Tuple[Tuple[Fraction, ...], ...]] = {
    1: (),
    3: (
        (Fraction(5, 16), Fraction(15, 16), Fraction(-5, 16), Fraction(1, 16)),
    ),
    5: (
        (Fraction(63, 256), Fraction(315, 256), Fraction(-105, 128),
         Fraction(63, 128), Fraction(-45, 256), Fraction(7, 256)),
        (Fraction(-7, 256), Fraction(105, 256), Fraction(105, 128),
         Fraction(-35, 128), Fraction(21, 256), Fraction(-3, 256)),
    ),
}


class GridError(ValueError):
    """Raised when a vector does not fit the dyadic grid it is used with."""


class UnsupportedGridError(GridError):
    """Raised when a grid is too coarse for the stencils of a prediction scheme."""


@dataclass(frozen=True)
class GridHierarchy:
    """
    Nested dyadic meshes on [0, 1] (or [0, 1]^2).

    Level k has J_k = j0 * 2**k cells and J_k + 1 nodes per direction.

    Attributes:
        j0 (int): Number of cells of the coarsest mesh.
        levels (int): Number of refinements L; the finest level is L.
        dim (int): Spatial dimension, 1 or 2.
    """
    j0: int
    levels: int
    dim: int = 1

    def __post_init__(self) -> None:
        if self.j0 < 1:
            raise GridError(f"j0 must be a positive integer, got {self.j0}")
        if self.levels < 0:
            raise GridError(f"levels must be non-negative, got {self.levels}")
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")

    @property
    def finest(self) -> int:
        return self.levels

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.levels:
            raise GridError(f"level {level} outside hierarchy range 0..{self.levels}")

    def cells(self, level: int) -> int:
        self._check_level(level)
        return self.j0 * 2 ** level

    def points(self, level: int) -> int:
        return self.cells(level) + 1

    def shape(self, level: int) -> Tuple[int, ...]:
        return (self.points(level),) * self.dim

    def size(self, level: int) -> int:
        return self.points(level) ** self.dim

    def spacing(self, level: int) -> float:
        return 1.0 / self.cells(level)

    def nodes(self, level: int) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.points(level))

    def stride(self, coarse_level: int, fine_level: int) -> int:
        """Index stride between a coarse node and its image on a finer level."""
        self._check_level(coarse_level)
        self._check_level(fine_level)
        if coarse_level > fine_level:
            raise GridError(f"level {coarse_level} is finer than level {fine_level}")
        return 2 ** (fine_level - coarse_level)

    def check_scheme(self, scheme: "PredictionScheme") -> None:
        """Raise UnsupportedGridError when the coarsest mesh cannot carry the scheme's stencils."""
        if self.levels > 0 and self.j0 < scheme.degree:
            raise UnsupportedGridError(
                f"j0={self.j0} is too coarse for degree {scheme.degree}: j0 >= n is required"
            )


@dataclass(frozen=True)
class PredictionScheme:
    """
    Interpolatory prediction operator of odd degree n on bounded intervals.

    Attributes:
        degree (int): Polynomial degree n in {1, 3, 5}.
        interior_weights (Tuple[float, ...]): beta_1..beta_{(n+1)/2}.
        left_boundary_rows (Tuple[Tuple[float, ...], ...]): (n-1)/2 rows of n+1
            weights for the odd fine points closest to the left end. The right
            end uses the same rows reflected.
    """
    degree: int
    interior_weights: Tuple[float, ...]
    left_boundary_rows: Tuple[Tuple[float, ...], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.degree not in SUPPORTED_DEGREES:
            raise ValueError(f"prediction degree must be one of {SUPPORTED_DEGREES}, got {self.degree}")
        if len(self.interior_weights) != (self.degree + 1) // 2:
            raise ValueError("interior weights do not match the scheme degree")
        if len(self.left_boundary_rows) != (self.degree - 1) // 2:
            raise ValueError("boundary rows do not match the scheme degree")
        if any(len(row) != self.degree + 1 for row in self.left_boundary_rows):
            raise ValueError("each boundary row needs n+1 weights")

    @property
    def half_width(self) -> int:
        return (self.degree + 1) // 2


def make_scheme(degree: int) -> PredictionScheme:
    """
    Build the prediction scheme of the given degree from its exact dyadic weights.

    Args:
        degree (int): Polynomial degree n in {1, 3, 5}.

    Returns:
        PredictionScheme: The scheme with weights converted once to double precision.

    Raises:
        ValueError: If the degree is not supported.
    """
    if degree not in SUPPORTED_DEGREES:
        raise ValueError(f"prediction degree must be one of {SUPPORTED_DEGREES}, got {degree}")
    return PredictionScheme(
        degree=degree,
        interior_weights=tuple(float(w) for w in _INTERIOR_WEIGHTS[degree]),
        left_boundary_rows=tuple(tuple(float(w) for w in row) for row in _LEFT_BOUNDARY_ROWS[degree]),
    )


def exact_weights(degree: int) -> Tuple[Tuple[Fraction, ...], Tuple[Tuple[Fraction, ...], ...]]:
    """Return the rational (interior, left boundary) weight tables of a degree."""
    return _INTERIOR_WEIGHTS[degree], _LEFT_BOUNDARY_ROWS[degree]


def lagrange_weights(nodes: Sequence[Fraction], point: Fraction) -> Tuple[Fraction, ...]:
    """
    Exact Lagrange interpolation weights of `nodes` evaluated at `point`.

    Args:
        nodes (Sequence[Fraction]): Distinct interpolation nodes.
        point (Fraction): Evaluation point.

    Returns:
        Tuple[Fraction, ...]: w such that p(point) = sum_j w_j p(nodes_j) for deg p < len(nodes).
    """
    weights = []
    for j, xj in enumerate(nodes):
        w = Fraction(1)
        for m, xm in enumerate(nodes):
            if m != j:
                w *= (point - xm) / (xj - xm)
        weights.append(w)
    return tuple(weights)


def _as_grid_array(values: np.ndarray, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim == 0:
        raise GridError(f"{name} must be at least one-dimensional")
    return array


def decimate(fine: np.ndarray) -> np.ndarray:
    """
    Downsample fine-level data to the next coarser level (even indices).

    Operates along the first axis, so batches of vectors stored as columns are
    decimated together.

    Args:
        fine (np.ndarray): Data with J_k + 1 entries along axis 0, J_k even.

    Returns:
        np.ndarray: Data with J_k / 2 + 1 entries along axis 0.

    Raises:
        GridError: If the length does not correspond to a refinable grid.
    """
    fine = _as_grid_array(fine, "fine")
    cells = fine.shape[0] - 1
    if cells < 2 or cells % 2:
        raise GridError(f"cannot decimate data with {fine.shape[0]} points: J_k must be even and positive")
    return fine[0::2].copy()


def predict_two_level(coarse: np.ndarray, scheme: PredictionScheme) -> np.ndarray:
    """
    Predict level-k data from level-(k-1) data.

    Even fine entries copy the coarse values. The odd fine entry 2i-1 uses the
    centered stencil of the n+1 coarse points i-(n+1)/2 .. i+(n-1)/2 in the
    interior, and the one-sided boundary rows (reflected at the right end)
    elsewhere. Operates along axis 0.

    Args:
        coarse (np.ndarray): Data with J_{k-1} + 1 entries along axis 0.
        scheme (PredictionScheme): Prediction rules to use.

    Returns:
        np.ndarray: Data with 2 J_{k-1} + 1 entries along axis 0.

    Raises:
        UnsupportedGridError: If J_{k-1} < n.
    """
    coarse = _as_grid_array(coarse, "coarse")
    n = scheme.degree
    cells = coarse.shape[0] - 1
    if cells < n or cells < 1:
        raise UnsupportedGridError(
            f"coarse grid with J={cells} cells is too small for degree {n} prediction"
        )
    fine = np.empty((2 * cells + 1,) + coarse.shape[1:], dtype=float)
    fine[0::2] = coarse
    odd = fine[1::2]

    half = scheme.half_width
    lo, hi = half, cells - half + 1
    interior = np.zeros((hi - lo + 1,) + coarse.shape[1:], dtype=float)
    for ell, beta in enumerate(scheme.interior_weights, start=1):
        interior += beta * (coarse[lo - ell:hi - ell + 1] + coarse[lo - 1 + ell:hi + ell])
    odd[lo - 1:hi] = interior

    left = coarse[:n + 1]
    right = coarse[cells - n:][::-1]
    for r, row in enumerate(scheme.left_boundary_rows):
        weights = np.asarray(row)
        odd[r] = np.tensordot(weights, left, axes=(0, 0))
        odd[cells - 1 - r] = np.tensordot(weights, right, axes=(0, 0))
    return fine


def predict_multilevel(coarse: np.ndarray, scheme: PredictionScheme, refinements: int) -> np.ndarray:
    """
    Apply the two-level prediction `refinements` times (P_l^k with k = l + refinements).

    Args:
        coarse (np.ndarray): Level-l data along axis 0.
        scheme (PredictionScheme): Prediction rules.
        refinements (int): k - l >= 0; zero returns a copy of the input.

    Returns:
        np.ndarray: Level-k data along axis 0.
    """
    if refinements < 0:
        raise GridError(f"cannot predict to a coarser level (refinements={refinements})")
    data = _as_grid_array(coarse, "coarse").copy()
    for _ in range(refinements):
        data = predict_two_level(data, scheme)
    return data


def prediction_matrix(cells: int, scheme: PredictionScheme, refinements: int) -> np.ndarray:
    """Dense matrix of P_l^k for a level with `cells` cells, built column by column from the canonical basis."""
    return predict_multilevel(np.eye(cells + 1), scheme, refinements)


def forward_two_level(fine: np.ndarray, scheme: PredictionScheme) -> Tuple[np.ndarray, np.ndarray]:
    """
    Two-level multiresolution transform: fine data -> (coarse data, details).

    d_i = fine_{2i-1} - (P coarse)_{2i-1} for 1 <= i <= J_{k-1}, stored at
    position i - 1 of the detail vector.
    """
    coarse = decimate(fine)
    predicted = predict_two_level(coarse, scheme)
    detail = np.asarray(fine, dtype=float)[1::2] - predicted[1::2]
    return coarse, detail


def inverse_two_level(coarse: np.ndarray, detail: np.ndarray, scheme: PredictionScheme) -> np.ndarray:
    """Exact inverse of forward_two_level."""
    coarse = _as_grid_array(coarse, "coarse")
    detail = _as_grid_array(detail, "detail")
    if detail.shape != (coarse.shape[0] - 1,) + coarse.shape[1:]:
        raise GridError(
            f"detail shape {detail.shape} does not match coarse shape {coarse.shape}"
        )
    fine = predict_two_level(coarse, scheme)
    fine[1::2] += detail
    return fine


@dataclass
class MultiResData:
    """
    Multiresolution representation (z^m, d^m, ..., d^{L-1}) of a finest-level vector.

    Attributes:
        coarse (np.ndarray): Level-m data, J_m + 1 entries.
        details (List[np.ndarray]): d^m .. d^{L-1}; d^k has J_k entries.
        base_level (int): m.
        top_level (int): L.
    """
    coarse: np.ndarray
    details: List[np.ndarray]
    base_level: int
    top_level: int

    @property
    def size(self) -> int:
        return int(self.coarse.size + sum(d.size for d in self.details))

    def detail(self, level: int) -> np.ndarray:
        """Return d^level."""
        if not self.base_level <= level < self.top_level:
            raise GridError(f"no detail vector for level {level}")
        return self.details[level - self.base_level]


def forward_full(z: np.ndarray, hierarchy: GridHierarchy, scheme: PredictionScheme,
                 base_level: int = 0) -> MultiResData:
    """
    Full multiresolution transform from the finest level down to `base_level`.

    Args:
        z (np.ndarray): Finest-level 1D data, J_L + 1 entries.
        hierarchy (GridHierarchy): The mesh ladder.
        scheme (PredictionScheme): Prediction rules.
        base_level (int): Coarsest level m of the representation.

    Returns:
        MultiResData: (z^m, d^m, ..., d^{L-1}).

    Raises:
        GridError: If z does not match the finest level or m is out of range.
    """
    z = _as_grid_array(z, "z")
    top = hierarchy.finest
    if z.shape[0] != hierarchy.points(top):
        raise GridError(f"expected {hierarchy.points(top)} finest-level points, got {z.shape[0]}")
    if not 0 <= base_level <= top:
        raise GridError(f"base level {base_level} outside 0..{top}")
    details: List[np.ndarray] = []
    current = z.copy()
    for _ in range(top, base_level, -1):
        current, detail = forward_two_level(current, scheme)
        details.append(detail)
    details.reverse()
    return MultiResData(coarse=current, details=details, base_level=base_level, top_level=top)


def inverse_full(rep: MultiResData, scheme: PredictionScheme) -> np.ndarray:
    """Rebuild the finest-level vector from its multiresolution representation."""
    current = np.asarray(rep.coarse, dtype=float).copy()
    for detail in rep.details:
        current = inverse_two_level(current, detail, scheme)
    return current


def detail_norms(rep: MultiResData) -> List[float]:
    """Max-norm of each detail vector d^m .. d^{L-1}."""
    return [float(np.max(np.abs(d))) if d.size else 0.0 for d in rep.details]


def detail_decay_rates(z: np.ndarray, hierarchy: GridHierarchy, scheme: PredictionScheme) -> List[Optional[float]]:
    """
    Base-2 log ratios ||d^{k-1}||/||d^k|| between consecutive detail levels.

    Entries with a zero norm are reported as None.
    """
    norms = detail_norms(forward_full(z, hierarchy, scheme))
    rates: List[Optional[float]] = []
    for previous, current in zip(norms[:-1], norms[1:]):
        if previous > 0.0 and current > 0.0:
            rates.append(float(np.log2(previous / current)))
        else:
            rates.append(None)
    return rates


def sample_limit_basis(cells: int, index: int, refinements: int, scheme: PredictionScheme) -> np.ndarray:
    """
    Sample the limit basis function of coarse node `index` on a refined grid.

    Args:
        cells (int): J_l, number of cells of the starting level.
        index (int): Coarse node 0 <= i <= J_l.
        refinements (int): m >= 1 prediction steps.
        scheme (PredictionScheme): Prediction rules.

    Returns:
        np.ndarray: J_l * 2**m + 1 samples of the basis function.
    """
    if refinements < 1:
        raise GridError(f"refinements must be >= 1, got {refinements}")
    if not 0 <= index <= cells:
        raise GridError(f"node index {index} outside 0..{cells}")
    delta = np.zeros(cells + 1)
    delta[index] = 1.0
    return predict_multilevel(delta, scheme, refinements)


def property_s_probe(scheme: PredictionScheme, hierarchy: GridHierarchy, trials: int = 16,
                     seed: int = 0) -> Tuple[float, float]:
    """
    Estimate the stability constants d1, d2 of ||e|| d1 <= ||P_l^k e|| <= d2 ||e||.

    For every level pair l < k <= L the ratio is measured on `trials` random
    vectors plus the sign vector that attains the induced max-norm of P_l^k.

    Args:
        scheme (PredictionScheme): Prediction rules.
        hierarchy (GridHierarchy): The mesh ladder (1D indexing is used).
        trials (int): Number of random vectors per level pair, >= 1.
        seed (int): Seed of the random generator.

    Returns:
        Tuple[float, float]: (d1_estimate, d2_estimate).
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    hierarchy.check_scheme(scheme)
    rng = np.random.default_rng(seed)
    d1, d2 = np.inf, 0.0
    for coarse_level in range(hierarchy.finest):
        cells = hierarchy.cells(coarse_level)
        samples = rng.uniform(-1.0, 1.0, size=(cells + 1, trials))
        for fine_level in range(coarse_level + 1, hierarchy.finest + 1):
            matrix = prediction_matrix(cells, scheme, fine_level - coarse_level)
            worst_row = int(np.argmax(np.abs(matrix).sum(axis=1)))
            extremal = np.sign(matrix[worst_row])
            extremal[extremal == 0.0] = 1.0
            vectors = np.column_stack([samples, extremal])
            ratios = np.max(np.abs(matrix @ vectors), axis=0) / np.max(np.abs(vectors), axis=0)
            d1 = min(d1, float(ratios.min()))
            d2 = max(d2, float(ratios.max()))
    logger.debug("Property S probe degree=%d: d1=%.6g d2=%.6g", scheme.degree, d1, d2)
    return d1, d2
