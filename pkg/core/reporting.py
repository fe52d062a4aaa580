import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from core.multiresolution import GridError, PredictionScheme, sample_limit_basis
from core.mropt import MrOptReport
from core.problems import SmoothnessTables
from core.tensor import Grid2Data

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["level", "N_k", "evals_k", "step_inf_norm", "F_value", "err_vs_reference", "decay_rate"]
FLOAT_FORMAT = "%.17g"


def _format_bool(value: bool) -> str:
    return "true" if value else "false"


def _format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def report_frame(report: MrOptReport) -> pd.DataFrame:
    """
    Tabulate the per-level records of a report.

    Args:
        report (MrOptReport): Completed or partial MR/OPT report.

    Returns:
        pd.DataFrame: One row per executed level with the report columns; undefined
            decay rates and missing reference errors are NaN.
    """
    rows = []
    for record in report.records:
        rate = report.rate_for_level(record.level)
        rows.append({
            "level": record.level,
            "N_k": record.dof,
            "evals_k": record.evals,
            "step_inf_norm": record.step_norm,
            "F_value": record.objective,
            "err_vs_reference": np.nan if record.error_vs_reference is None else record.error_vs_reference,
            "decay_rate": np.nan if rate is None else rate,
        })
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    return frame.astype({
        "level": "int64", "N_k": "int64", "evals_k": "int64",
        "step_inf_norm": "float64", "F_value": "float64", "err_vs_reference": "float64", "decay_rate": "float64",
    })


def emit_report(report: MrOptReport, path: Path, spec: str, seed: int,
                extra_footer: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write the report CSV.

    Layout: `# spec:` and `# seed:` header lines, the per-level table, then the
    footer lines `total_evals,<n>` and `stopped_early,<bool>` followed by any
    extra footer entries in insertion order. Floats use 17 significant digits
    so identical runs produce identical files.

    Args:
        report (MrOptReport): The report to write.
        path (Path): Destination file, truncated if it exists.
        spec (str): Canonical run specification string.
        seed (int): Seed of the run.
        extra_footer (Optional[Dict[str, Any]]): Additional footer key/value pairs.

    Returns:
        Path: The written file.

    Raises:
        OSError: If the file cannot be written; the message names the path.
    """
    footer: Dict[str, Any] = {"total_evals": report.total_evals, "stopped_early": report.stopped_early}
    footer.update(extra_footer or {})
    try:
        with open(path, "w", newline="") as f:
            f.write(f"# spec: {spec}\n")
            f.write(f"# seed: {seed}\n")
            report_frame(report).to_csv(f, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
            for key, value in footer.items():
                if isinstance(value, (bool, np.bool_)):
                    value = _format_bool(bool(value))
                elif isinstance(value, float):
                    value = _format_float(value)
                f.write(f"{key},{value}\n")
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e
    logger.info("Report written to %s", path)
    return path


def dump_solution(values: Union[np.ndarray, Grid2Data], path: Path) -> Path:
    """
    Write grid values as plain text.

    1D data gives lines "x,value"; square 2D data gives lines "x,y,value" in
    row-major order (y outer, x inner). Nodes are uniform on [0, 1].

    Args:
        values (Union[np.ndarray, Grid2Data]): 1D vector or square 2D grid.
        path (Path): Destination file.

    Returns:
        Path: The written file.

    Raises:
        GridError: If 2D data is not square.
        OSError: If the file cannot be written.
    """
    data = values.values if isinstance(values, Grid2Data) else np.asarray(values, dtype=float)
    if data.ndim == 1:
        x = np.linspace(0.0, 1.0, data.size)
        frame = pd.DataFrame({"x": x, "value": data})
    elif data.ndim == 2 and data.shape[0] == data.shape[1]:
        nodes = np.linspace(0.0, 1.0, data.shape[0])
        y, x = np.meshgrid(nodes, nodes, indexing="ij")
        frame = pd.DataFrame({"x": x.ravel(), "y": y.ravel(), "value": data.ravel()})
    else:
        raise GridError(f"cannot dump data of shape {data.shape}")
    try:
        frame.to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise OSError(f"cannot write solution to {path}: {e}") from e
    logger.debug("Solution dump written to %s", path)
    return path


def load_solution(path: Path) -> np.ndarray:
    """
    Parse a solution dump back into its values.

    Returns:
        np.ndarray: 1D vector for "x,value" dumps, square 2D grid (rows = y) for "x,y,value" dumps.

    Raises:
        FileNotFoundError: If the file does not exist.
        GridError: If the dump has an unexpected number of columns or a non-square 2D grid.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Solution dump not found: {path}")
    frame = pd.read_csv(path, header=None, float_precision="round_trip")
    values = frame.iloc[:, -1].to_numpy(dtype=float)
    if frame.shape[1] == 2:
        return values
    if frame.shape[1] == 3:
        side = int(round(np.sqrt(values.size)))
        if side * side != values.size:
            raise GridError(f"{path} holds {values.size} values, not a square grid")
        return values.reshape(side, side)
    raise GridError(f"{path} has {frame.shape[1]} columns, expected 2 or 3")


def dump_limit_basis(scheme: PredictionScheme, cells: int, indices: Sequence[int], refinements: int,
                     path: Path) -> Path:
    """Write samples of the limit basis functions of the given coarse nodes, one column per node."""
    columns: Dict[str, np.ndarray] = {"x": np.linspace(0.0, 1.0, cells * 2 ** refinements + 1)}
    for index in indices:
        columns[f"phi_{index}"] = sample_limit_basis(cells, index, refinements, scheme)
    try:
        pd.DataFrame(columns).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise OSError(f"cannot write limit basis samples to {path}: {e}") from e
    logger.info("Limit basis samples of degree %d written to %s", scheme.degree, path)
    return path


def dump_smoothness(tables: SmoothnessTables, path: Path) -> Path:
    """Write the smoothness tables as x,y,<table columns>; entries without a stencil are left empty."""
    first = tables.third_diff_x
    nodes = np.linspace(0.0, 1.0, first.shape[0])
    y, x = np.meshgrid(nodes, nodes, indexing="ij")
    columns: Dict[str, np.ndarray] = {"x": x.ravel(), "y": y.ravel()}
    columns.update({name: table.ravel() for name, table in tables.as_dict().items()})
    try:
        pd.DataFrame(columns).to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    except OSError as e:
        raise OSError(f"cannot write smoothness tables to {path}: {e}") from e
    logger.info("Smoothness tables written to %s", path)
    return path


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_summary(path: Path, payload: Dict[str, Any]) -> Path:
    """
    Write a JSON summary of a run.

    Args:
        path (Path): Destination file.
        payload (Dict[str, Any]): JSON-compatible data; numpy scalars and arrays are converted.

    Returns:
        Path: The written file.

    Raises:
        OSError: If the file cannot be written.
    """
    try:
        with open(path, "w") as f:
            json.dump(payload, f, indent=4, default=_to_builtin)
    except OSError as e:
        raise OSError(f"cannot write summary to {path}: {e}") from e
    logger.info("Wrote summary to %s", path)
    return path
