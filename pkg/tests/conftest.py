import numpy as np
import pytest

from plasticswarm.continuum import ControlConfig
from plasticswarm.grid import Grid1D, GridND
from plasticswarm.kernels import MorseParams, bimodal_von_mises, von_mises, von_mises_nd

# acceptance lines collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid600():
    return Grid1D(600)


@pytest.fixture(scope="session")
def bimodal_config(grid600):
    """The bimodal 1D preset setup with Phi_F = 0.4 (infeasible: p_hat > p)."""
    return ControlConfig(
        D=0.05, K=1.0, K_FL=1.0, K_LF=2.0, Phi_F=0.4,
        kernel=MorseParams(np.pi, np.pi / 2, 2.0),
        target=bimodal_von_mises(np.pi / 2, -np.pi / 2, 3.0, grid600),
        dt=1e-3, t_f=15.0,
    )


@pytest.fixture(scope="session")
def feasible_config(bimodal_config):
    """Same setup with Phi_F = 0.1, which lies inside the feasible region."""
    return bimodal_config.with_(Phi_F=0.1)


@pytest.fixture(scope="session")
def small_config():
    """Cheap feasible 1D setup for unit tests."""
    g = Grid1D(128)
    return ControlConfig(
        D=0.05, K=2.0, K_FL=1.0, K_LF=2.0, Phi_F=0.2,
        kernel=MorseParams(np.pi, np.pi / 4, 2.0),
        target=von_mises(0.0, 1.0, g),
        dt=2e-3, t_f=2.0,
    )


@pytest.fixture(scope="session")
def config2d():
    """Feasible 2D setup (unit-concentration target relaxed to k = 0.5) on a 32x32 grid."""
    g = GridND((32, 32))
    return ControlConfig(
        D=0.05, K=1.0, K_FL=1.0, K_LF=2.0, Phi_F=0.2,
        kernel=MorseParams(np.pi, np.pi / 4, 3.2),
        target=von_mises_nd([0.0, 0.0], [0.5, 0.5], g),
        dt=1e-3, t_f=5.0,
    )
