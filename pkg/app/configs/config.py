"""Configuration settings for the queue delay lab."""

from pydantic import field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from configs.logger import get_logger

logger = get_logger("config")


class Settings(BaseSettings):
    """Lab-wide defaults loaded from environment variables (prefix QLAB_)."""

    model_config = SettingsConfigDict(
        env_prefix="QLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Integration
    steps_per_delay: int = 128
    horizon_delays: float = 100.0
    horizon_periods_factor: float = 400.0
    horizon_extensions: int = 2

    # Classification
    burn_in: float = 0.5
    converging_ratio: float = 0.9
    oscillating_ratio: float = 0.98
    amplitude_floor: float = 1e-6

    # Stability / scans
    resonance_tolerance: float = 1e-6
    scan_tolerance: float = 1e-3
    scan_workers: int = 1

    # App settings
    output_dir: str = "output"
    log_level: str = "INFO"

    @field_validator('steps_per_delay')
    @classmethod
    def validate_steps(cls, v: int) -> int:
        """The delay grid needs at least 16 steps per delay interval."""
        if v < 16:
            raise ValueError("steps_per_delay must be at least 16")
        return v

    @field_validator('burn_in')
    @classmethod
    def validate_burn_in(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("burn_in must be a fraction in [0, 1)")
        return v

    @field_validator('horizon_delays', 'horizon_periods_factor', 'scan_tolerance', 'amplitude_floor',
                     'resonance_tolerance')
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("value must be positive")
        return v

    @field_validator('horizon_extensions')
    @classmethod
    def validate_extensions(cls, v: int) -> int:
        if v < 0:
            raise ValueError("horizon_extensions must not be negative")
        return v

    @field_validator('scan_workers')
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("scan_workers must be at least 1")
        return v

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level: {v}")
        return level

    @model_validator(mode="after")
    def validate_ratios(self) -> "Settings":
        """Converging and oscillating envelope ratios must leave an indeterminate band."""
        if not 0 < self.converging_ratio <= self.oscillating_ratio:
            raise ValueError("need 0 < converging_ratio <= oscillating_ratio")
        return self


_settings: Settings | None = None


def get_settings() -> Settings:
    """Get application settings (singleton pattern)."""
    global _settings

    if _settings is None:
        logger.info("Loading lab settings from environment")
        _settings = Settings()
        logger.info(f"Settings loaded - steps per delay: {_settings.steps_per_delay}, "
                    f"burn-in: {_settings.burn_in}")

    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the next get_settings() re-reads the environment."""
    global _settings
    _settings = None
