import pytest
from pathlib import Path

from core.utils import create_output_folders, format_optional, solution_path


# Use tmp_path fixture to ensure isolated temporary directories.
def test_create_output_folders(tmp_path):
    """The report, summary and dump paths sit directly under the output folder."""
    base = tmp_path / "results" / "bvp1d"
    paths = create_output_folders(base)
    assert base.is_dir()
    assert paths["report"] == base / "report.csv"
    assert paths["summary"] == base / "summary.json"
    assert paths["limit_basis"] == base / "limit_basis.csv"
    assert paths["smoothness"] == base / "smoothness.csv"
    # The solutions folder is only created on request.
    assert not paths["solutions"].exists()


def test_create_output_folders_is_idempotent(tmp_path):
    """A second call keeps what the first run wrote."""
    base = tmp_path / "out"
    create_output_folders(base, with_solutions=True)
    (base / "solutions" / "level_0.csv").write_text("0,1\n")
    paths = create_output_folders(base, with_solutions=True)
    assert paths["solutions"].is_dir()
    assert (base / "solutions" / "level_0.csv").exists(), "existing dumps must survive a second call"


def test_create_output_folders_over_a_file(tmp_path):
    """A file in place of the output folder raises OSError."""
    blocker = tmp_path / "taken"
    blocker.write_text("")
    with pytest.raises(OSError):
        create_output_folders(blocker)


# Parameterized tests for solution_path, the direct baseline included.
@pytest.mark.parametrize("level,expected", [
    (0, "level_0.csv"),
    (12, "level_12.csv"),
    (None, "direct.csv"),
])
def test_solution_path(level, expected):
    result = solution_path(Path("solutions"), level)
    assert result == Path("solutions") / expected, f"Expected '{expected}', got '{result.name}'"


# Parameterized tests for format_optional; None prints as n/a.
@pytest.mark.parametrize("value,digits,expected", [
    (None, 3, "n/a"),
    (1.98765, 3, "1.988"),
    (0.5, 4, "0.5000"),
    (float("nan"), 2, "nan"),
])
def test_format_optional(value, digits, expected):
    assert format_optional(value, digits) == expected
