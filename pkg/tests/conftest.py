import numpy as np
import pytest

from app.schemas.governance import GovernanceConfig
from app.schemas.model import ModelFamily, ModelSpec, RateFunction
from app.schemas.trajectory import PerturbedTargets
from app.services.sde_engine import make_grid
from app.services.trajectories import constant_trajectory, sigma_schedule_constant


@pytest.fixture(autouse=True)
def testing_config(monkeypatch):
    """Every test runs against the testing configuration class."""
    monkeypatch.setenv('RISKGOV_CONFIG', 'testing')


@pytest.fixture
def unit_grid():
    """One year at dt = 1e-3."""
    return make_grid(0.0, 1.0, 1e-3)


@pytest.fixture
def coarse_grid():
    """One year in ten steps."""
    return make_grid(0.0, 1.0, 0.1)


@pytest.fixture
def independent_spec():
    """Ten independent banks, D = -0.7, sigma = 1."""
    return ModelSpec(
        family=ModelFamily.INDEPENDENT,
        n_banks=10,
        vol=sigma_schedule_constant(1.0),
        default_level=-0.7,
    )


@pytest.fixture
def make_fouque_sun():
    """Factory for Fouque-Sun models with D = -0.7."""
    def _make(alpha, n_banks=10, sigma=1.0, default_level=-0.7):
        return ModelSpec(
            family=ModelFamily.FOUQUE_SUN,
            n_banks=n_banks,
            alpha=RateFunction.constant(alpha),
            vol=sigma_schedule_constant(sigma),
            default_level=default_level,
        )
    return _make


@pytest.fixture
def make_two_mechanism():
    """Factory for two-mechanism models tracking a constant xi."""
    def _make(alpha=20.0, gamma=-1.0, xi=1.0, epsilon=0.1, sigma=1.0, n_banks=10,
              default_level=0.3, t1=1.0):
        return ModelSpec(
            family=ModelFamily.TWO_MECHANISM,
            n_banks=n_banks,
            alpha=RateFunction.constant(alpha),
            gamma=RateFunction.constant(gamma),
            vol=sigma_schedule_constant(sigma),
            targets=PerturbedTargets(base=constant_trajectory(xi, 0.0, t1), epsilon=epsilon),
            default_level=default_level,
        )
    return _make


@pytest.fixture
def small_governance():
    """Experiment-1 parameters at test scale."""
    return GovernanceConfig(n_paths=50, dt_sim=1e-2, dt_ode=1e-3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def config_file(tmp_path):
    """Write a key = value run configuration and return its path."""
    def _write(text, name='run.cfg'):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return _write
