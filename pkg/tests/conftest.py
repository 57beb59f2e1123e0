import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))

from config import load_preset  # noqa: E402
from fpe import Grid1D  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: fine grids or 10^4+ Monte Carlo paths")


@pytest.fixture(scope="session")
def fig1():
    return load_preset("fig1").spec


@pytest.fixture(scope="session")
def fig2a():
    return load_preset("fig2a").spec


@pytest.fixture(scope="session")
def fig3():
    return load_preset("fig3").spec


@pytest.fixture(scope="session")
def hopf():
    return load_preset("hopf-rotating").spec


@pytest.fixture
def unit_grid():
    return Grid1D(512, 1e-4, 1.0)
