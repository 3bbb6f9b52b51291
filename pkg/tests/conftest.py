import numpy as np
import pytest

from mfliq import build_grid, simulate_ensemble
from mfliq.core import PicardOptions

# geometric ratios making the refined block span 8% of the horizon
RATIO_120 = (1e-6 / 0.08) ** (1.0 / 120)
RATIO_60 = (1e-4 / 0.08) ** (1.0 / 60)
RATIO_20 = (1e-4 / 0.08) ** (1.0 / 20)


@pytest.fixture(scope="session")
def fine_grid():
    """Deterministic-oracle grid: tight final gap for terminal checks."""
    return build_grid(1.0, 300, 120, RATIO_120, 1e-6)


@pytest.fixture(scope="session")
def det_ensemble(fine_grid):
    """Single-particle ensemble: all estimators reduce to identities."""
    return simulate_ensemble(fine_grid, 1, 1, 0)


@pytest.fixture(scope="session")
def coarse_grid():
    return build_grid(1.0, 60, 20, RATIO_20, 1e-4)


@pytest.fixture(scope="session")
def mc_ensemble(coarse_grid):
    """Desk-scale stochastic ensemble."""
    return simulate_ensemble(coarse_grid, 200, 200, 42)


@pytest.fixture()
def tight_opts():
    """Undamped iteration for closed-form cases (they converge in one map
    application); tight tolerance so oracle comparisons are clean."""
    return PicardOptions(tol=1e-11, damping=1.0)
