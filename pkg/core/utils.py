import logging
from pathlib import Path
from typing import Dict, Optional

logger = logging.getLogger(__name__)


def create_output_folders(base_path: Path, with_solutions: bool = False) -> Dict[str, Path]:
    """
    Create the output directory of a run and return a mapping of its entries.

    Existing folders are left intact; files written later are truncated.

    Args:
        base_path (Path): The output directory.
        with_solutions (bool): Also create the `solutions` sub-folder.

    Returns:
        Dict[str, Path]: Paths of the report, summary, dump files and folders.
    """
    base_path.mkdir(parents=True, exist_ok=True)
    paths = {
        "root": base_path,
        "report": base_path / "report.csv",
        "summary": base_path / "summary.json",
        "solutions": base_path / "solutions",
        "limit_basis": base_path / "limit_basis.csv",
        "smoothness": base_path / "smoothness.csv",
    }
    if with_solutions:
        paths["solutions"].mkdir(parents=True, exist_ok=True)
    logger.debug("Output folder ready: %s", base_path)
    return paths


def solution_path(folder: Path, level: Optional[int]) -> Path:
    """File of the level-k sub-optimal solution, or of the direct baseline when level is None."""
    return folder / ("direct.csv" if level is None else f"level_{level}.csv")


def format_optional(value: Optional[float], digits: int = 3) -> str:
    """Short human-readable number for log lines; undefined values print as 'n/a'."""
    return "n/a" if value is None else f"{value:.{digits}f}"
