import numpy as np
import pytest

from sgtorus import dynamics, presets
from sgtorus.grid import TorusGrid


@pytest.fixture(scope="session")
def short_run():
    """25-step mixed-spectrum run on a coarse grid, shared across tests."""
    grid = TorusGrid(32)
    rho0, lam, Lam = presets.two_mode_density(grid)
    return dynamics.run(rho0, grid, dt=2e-3, t_end=0.05, lam=lam, Lam=Lam)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
