"""Scenario documents: one key=value file per simulation setup."""

from pathlib import Path

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from configs.logger import get_logger
from services.errors import ConfigError
from services.model_service import HistoryFunction, ModelKind, ModelParams
from services.stability_service import SignRule

logger = get_logger("scenario")

FIXTURES_DIR = Path(__file__).resolve().parents[1] / "fixtures"


class ScenarioConfig(BaseModel):
    """Model kind, parameters, constant histories, grid and output paths of one run."""

    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    kind: ModelKind = ModelKind.CONSTANT_DELAY
    lam: float
    mu: float
    alpha: float = 0.0
    epsilon: float = 0.0
    gamma: float = 0.0
    delta: float
    history_q1: float
    history_q2: float
    steps_per_delay: int | None = None
    t_end: float | None = None
    burn_in: float | None = None
    assume_resonant: bool = False
    sign_rule: SignRule = SignRule.INTEGRATION
    csv_path: str | None = None
    report_path: str | None = None

    @field_validator('kind', mode='before')
    @classmethod
    def parse_kind(cls, v: object) -> ModelKind:
        if isinstance(v, str | ModelKind):
            return ModelKind.parse(v)
        raise ValueError(f"unknown model kind {v!r}")

    @field_validator('steps_per_delay')
    @classmethod
    def validate_steps(cls, v: int | None) -> int | None:
        if v is not None and v < 16:
            raise ValueError("steps_per_delay must be at least 16")
        return v

    @field_validator('t_end')
    @classmethod
    def validate_horizon(cls, v: float | None) -> float | None:
        if v is not None and v <= 0:
            raise ValueError("t_end must be positive")
        return v

    @field_validator('burn_in')
    @classmethod
    def validate_burn_in(cls, v: float | None) -> float | None:
        if v is not None and not 0.0 <= v < 1.0:
            raise ValueError("burn_in must be a fraction in [0, 1)")
        return v

    @model_validator(mode="after")
    def validate_params(self) -> "ScenarioConfig":
        """Run the ModelParams invariants eagerly so bad files fail on load."""
        try:
            self.params  # noqa: B018
        except ValidationError as e:
            raise ValueError(f"invalid model parameters: {e}") from e
        return self

    @property
    def params(self) -> ModelParams:
        return ModelParams(lam=self.lam, mu=self.mu, alpha=self.alpha, epsilon=self.epsilon,
                           gamma=self.gamma, delta=self.delta)

    @property
    def history(self) -> HistoryFunction:
        return HistoryFunction.constant(self.history_q1, self.history_q2)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """
    Load and validate a scenario document.

    Args:
        path: A key=value file; bare names such as "fig5" resolve to the bundled fixtures

    Returns:
        Validated ScenarioConfig
    """
    path = Path(path)
    if not path.exists() and (FIXTURES_DIR / f"{path.name}.env").exists():
        path = FIXTURES_DIR / f"{path.name}.env"
    if not path.exists():
        raise ConfigError(f"Scenario file not found: {path}")

    logger.info(f"Loading scenario from {path}")
    raw = {k.strip().lower(): v for k, v in dotenv_values(path).items() if v not in (None, "")}
    raw.setdefault("name", path.stem)

    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        logger.error(f"Invalid scenario {path}: {e.error_count()} error(s)")
        raise ConfigError(f"Invalid scenario {path}: {e}") from e
