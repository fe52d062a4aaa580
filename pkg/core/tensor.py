import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from core.multiresolution import (
    GridError,
    GridHierarchy,
    PredictionScheme,
    forward_two_level,
    inverse_two_level,
    predict_two_level,
)

logger = logging.getLogger(__name__)

# Detail blocks of one level, keyed by the parity of (x, y) fine indices.
DETAIL_KEYS = ("odd_x_even_y", "even_x_odd_y", "odd_x_odd_y")


@dataclass
class Grid2Data:
    """
    Point values on the square grid of one level.

    Attributes:
        values (np.ndarray): (J_k + 1) x (J_k + 1) array, row index = y node, column index = x node.
        level (int): Level k.
    """
    values: np.ndarray
    level: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise GridError(f"2D grid data must be square, got shape {self.values.shape}")

    @property
    def cells(self) -> int:
        return self.values.shape[0] - 1

    def flatten(self) -> np.ndarray:
        """Row-major vector (y outer, x inner)."""
        return self.values.ravel().copy()

    @classmethod
    def from_vector(cls, vector: np.ndarray, level: int = 0) -> "Grid2Data":
        vector = np.asarray(vector, dtype=float)
        side = int(round(np.sqrt(vector.size)))
        if side * side != vector.size:
            raise GridError(f"vector of length {vector.size} is not a square grid")
        return cls(values=vector.reshape(side, side), level=level)

    def check_level(self, hierarchy: GridHierarchy) -> None:
        if self.values.shape != hierarchy.shape(self.level) or hierarchy.dim != 2:
            raise GridError(
                f"grid of shape {self.values.shape} does not match level {self.level} of the hierarchy"
            )


@dataclass
class MultiResData2:
    """
    Tensor-product multiresolution representation of a square grid.

    Attributes:
        coarse (np.ndarray): (J_m + 1)^2 block at the base level.
        details (List[Dict[str, np.ndarray]]): One dict per level m..L-1 keyed by DETAIL_KEYS.
        base_level (int): m.
        top_level (int): L.
    """
    coarse: np.ndarray
    details: List[Dict[str, np.ndarray]]
    base_level: int
    top_level: int

    @property
    def size(self) -> int:
        return int(self.coarse.size + sum(block.size for level in self.details for block in level.values()))

    def detail_norm(self, level: int) -> float:
        blocks = self.details[level - self.base_level]
        return float(max(np.max(np.abs(block)) for block in blocks.values()))


def _square(values: np.ndarray) -> np.ndarray:
    if isinstance(values, Grid2Data):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise GridError(f"2D grid data must be square, got shape {values.shape}")
    return values


def predict_two_level_2d(coarse: np.ndarray, scheme: PredictionScheme) -> np.ndarray:
    """Tensor-product prediction: 1D prediction along y (columns) then along x (rows)."""
    coarse = _square(coarse)
    along_y = predict_two_level(coarse, scheme)
    return predict_two_level(along_y.T, scheme).T


def predict_multilevel_2d(coarse: np.ndarray, scheme: PredictionScheme, refinements: int) -> np.ndarray:
    """Repeated 2D prediction; zero refinements returns a copy."""
    if refinements < 0:
        raise GridError(f"cannot predict to a coarser level (refinements={refinements})")
    data = _square(coarse).copy()
    for _ in range(refinements):
        data = predict_two_level_2d(data, scheme)
    return data


def forward_two_level_2d(fine: np.ndarray, scheme: PredictionScheme,
                         axis_order: str = "xy") -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Two-level tensor-product transform of a square grid.

    With axis_order "xy" the 1D transform is applied to every row (along x)
    first, then to every column (along y) of both halves; "yx" does columns
    first. The coarse block is the (even, even) sub-grid and the details are
    split into the three odd-parity blocks.

    Args:
        fine (np.ndarray): (J_k + 1)^2 grid, rows indexed by y.
        scheme (PredictionScheme): Prediction rules.
        axis_order (str): "xy" or "yx".

    Returns:
        Tuple[np.ndarray, Dict[str, np.ndarray]]: Coarse grid and detail blocks.
    """
    fine = _square(fine)
    if axis_order == "xy":
        coarse_x, detail_x = forward_two_level(fine.T, scheme)
        coarse, even_x_odd_y = forward_two_level(coarse_x.T, scheme)
        odd_x_even_y, odd_x_odd_y = forward_two_level(detail_x.T, scheme)
    elif axis_order == "yx":
        coarse_y, detail_y = forward_two_level(fine, scheme)
        coarse_t, odd_x_even_y_t = forward_two_level(coarse_y.T, scheme)
        even_x_odd_y_t, odd_x_odd_y_t = forward_two_level(detail_y.T, scheme)
        coarse, odd_x_even_y = coarse_t.T, odd_x_even_y_t.T
        even_x_odd_y, odd_x_odd_y = even_x_odd_y_t.T, odd_x_odd_y_t.T
    else:
        raise ValueError(f"axis_order must be 'xy' or 'yx', got {axis_order!r}")
    details = {
        "odd_x_even_y": odd_x_even_y,
        "even_x_odd_y": even_x_odd_y,
        "odd_x_odd_y": odd_x_odd_y,
    }
    return coarse, details


def inverse_two_level_2d(coarse: np.ndarray, details: Dict[str, np.ndarray],
                         scheme: PredictionScheme) -> np.ndarray:
    """
    Exact inverse of forward_two_level_2d.

    Raises:
        GridError: If a detail block is missing or has the wrong shape.
    """
    coarse = _square(coarse)
    cells = coarse.shape[0] - 1
    expected = {
        "odd_x_even_y": (cells + 1, cells),
        "even_x_odd_y": (cells, cells + 1),
        "odd_x_odd_y": (cells, cells),
    }
    for key, shape in expected.items():
        if key not in details or np.shape(details[key]) != shape:
            raise GridError(f"detail block {key} must have shape {shape}")
    coarse_x = inverse_two_level(coarse, details["even_x_odd_y"], scheme)
    detail_x = inverse_two_level(details["odd_x_even_y"], details["odd_x_odd_y"], scheme)
    return inverse_two_level(coarse_x.T, detail_x.T, scheme).T


def forward_full_2d(z: np.ndarray, hierarchy: GridHierarchy, scheme: PredictionScheme,
                    base_level: int = 0) -> MultiResData2:
    """Full 2D transform from the finest level down to `base_level`."""
    z = _square(z)
    top = hierarchy.finest
    if z.shape != (hierarchy.points(top),) * 2:
        raise GridError(f"expected a {hierarchy.points(top)}^2 finest grid, got {z.shape}")
    if not 0 <= base_level <= top:
        raise GridError(f"base level {base_level} outside 0..{top}")
    details: List[Dict[str, np.ndarray]] = []
    current = z.copy()
    for _ in range(top, base_level, -1):
        current, blocks = forward_two_level_2d(current, scheme)
        details.append(blocks)
    details.reverse()
    return MultiResData2(coarse=current, details=details, base_level=base_level, top_level=top)


def inverse_full_2d(rep: MultiResData2, scheme: PredictionScheme) -> np.ndarray:
    current = np.asarray(rep.coarse, dtype=float).copy()
    for blocks in rep.details:
        current = inverse_two_level_2d(current, blocks, scheme)
    return current
