import pytest
from pydantic import ValidationError

from configs.config import Settings, get_settings, reset_settings
from configs.scenario import ScenarioConfig, load_scenario
from services.errors import ConfigError
from services.model_service import ModelKind
from services.stability_service import SignRule

FIGURES = ["fig5", "fig6", "fig7", "fig8", "fig10", "fig11"]


@pytest.mark.parametrize("name", FIGURES)
def test_fixtures_load(name):
    cfg = load_scenario(name)
    assert cfg.name == name
    assert cfg.params.alpha == 1
    assert cfg.params.epsilon == 0.2


def test_fig5_fixture_values(fig5):
    assert fig5.kind is ModelKind.CONSTANT_DELAY
    assert (fig5.lam, fig5.mu, fig5.delta) == (3.0, 1.0, 1.947)
    assert fig5.gamma == pytest.approx(5 ** 0.5, rel=1e-15)
    assert (fig5.history_q1, fig5.history_q2) == (1.0, 2.0)
    assert not fig5.assume_resonant


def test_fig10_fixture_values(fig10):
    assert fig10.kind is ModelKind.MOVING_AVERAGE
    assert fig10.delta == 2.18
    assert fig10.gamma == pytest.approx((10 / 2.1448 - 1) ** 0.5, abs=1e-5)
    assert fig10.assume_resonant
    assert fig10.sign_rule is SignRule.INTEGRATION
    assert fig10.history.dimension == 2


def test_fig11_history():
    cfg = load_scenario("fig11")
    assert (cfg.history_q1, cfg.history_q2) == (3.9, 4.0)


def test_load_from_path(tmp_path):
    path = tmp_path / "custom.env"
    path.write_text("KIND=MovingAverage\nLAM=10\nMU=1\nDELTA=1.5\nHISTORY_Q1=3\nHISTORY_Q2=3\nSTEPS_PER_DELAY=64\n")
    cfg = load_scenario(path)
    assert cfg.name == "custom"
    assert cfg.kind is ModelKind.MOVING_AVERAGE
    assert cfg.steps_per_delay == 64
    assert cfg.params.epsilon == 0.0


@pytest.mark.parametrize("body", [
    "LAM=-3\nMU=1\nDELTA=1\nHISTORY_Q1=1\nHISTORY_Q2=2\n",
    "KIND=exponential\nLAM=3\nMU=1\nDELTA=1\nHISTORY_Q1=1\nHISTORY_Q2=2\n",
    "LAM=3\nMU=1\nHISTORY_Q1=1\nHISTORY_Q2=2\n",
    "LAM=3\nMU=1\nDELTA=1\nHISTORY_Q1=1\nHISTORY_Q2=2\nSTEPS_PER_DELAY=4\n",
    "LAM=3\nMU=1\nALPHA=1\nEPSILON=2\nDELTA=1\nHISTORY_Q1=1\nHISTORY_Q2=2\n",
    "LAM=3\nMU=1\nDELTA=1\nHISTORY_Q1=1\nHISTORY_Q2=2\nBURN_IN=1.5\n",
])
def test_invalid_scenarios(tmp_path, body):
    path = tmp_path / "bad.env"
    path.write_text(body)
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_missing_scenario(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nowhere.env")


def test_scenario_is_frozen(fig5):
    with pytest.raises(ValidationError):
        fig5.delta = 2.0


def test_scenario_direct_construction():
    cfg = ScenarioConfig(lam=3, mu=1, delta=2.0, history_q1=1, history_q2=1, kind="ConstantDelay")
    assert cfg.kind is ModelKind.CONSTANT_DELAY
    assert cfg.params.delta == 2.0


def test_settings_defaults():
    settings = get_settings()
    assert settings.steps_per_delay == 128
    assert settings.burn_in == 0.5
    assert settings.converging_ratio == 0.9
    assert settings.oscillating_ratio == 0.98
    assert settings.scan_workers == 1
    assert settings.horizon_extensions == 2
    assert "debug" not in Settings.model_fields
    assert get_settings() is settings


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("QLAB_STEPS_PER_DELAY", "64")
    monkeypatch.setenv("QLAB_LOG_LEVEL", "debug")
    reset_settings()
    settings = get_settings()
    assert settings.steps_per_delay == 64
    assert settings.log_level == "DEBUG"


@pytest.mark.parametrize("overrides", [
    {"steps_per_delay": 8},
    {"burn_in": 1.0},
    {"scan_workers": 0},
    {"log_level": "LOUD"},
    {"converging_ratio": 0.99, "oscillating_ratio": 0.95},
    {"scan_tolerance": 0.0},
    {"horizon_extensions": -1},
])
def test_settings_validation(overrides):
    with pytest.raises(ValidationError):
        Settings(**overrides)
