import numpy as np
import pytest

from configs.config import reset_settings
from configs.scenario import load_scenario
from services.model_service import ModelParams


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch, tmp_path):
    """Every test starts from default settings, isolated from any local .env."""
    monkeypatch.chdir(tmp_path)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fig5_params():
    return ModelParams(lam=3, mu=1, alpha=1, epsilon=0.2, gamma=5 ** 0.5, delta=1.947)


@pytest.fixture
def fig10_params():
    return ModelParams(lam=10, mu=1, alpha=1, epsilon=0.2, gamma=1.913752, delta=2.18)


@pytest.fixture
def fig5():
    return load_scenario("fig5")


@pytest.fixture
def fig10():
    return load_scenario("fig10")
