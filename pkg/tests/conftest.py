import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from core.multiresolution import make_scheme


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the long benchmark tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    temp = Path(tempfile.mkdtemp())
    yield temp
    shutil.rmtree(temp, ignore_errors=True)


@pytest.fixture
def rng():
    """Seeded random generator so every test is reproducible."""
    return np.random.default_rng(12345)


@pytest.fixture(params=[1, 3, 5], ids=["n1", "n3", "n5"])
def scheme(request):
    """Prediction scheme of every supported degree."""
    return make_scheme(request.param)
