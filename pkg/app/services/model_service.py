"""
Two-queue fluid models with delayed MNL choice and a sinusoidal arrival rate.

Both models share the arrival rate lambda(t) = lambda * (1 + alpha * epsilon * sin(gamma t))
and the logit split between the two queues. The constant-delay model reads the queue
lengths Delta time units in the past; the moving-average model carries the window
averages m1, m2 as extra state driven by the current and lagged queue lengths.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import expit

from configs.logger import get_logger
from services.errors import ConfigError

logger = get_logger("model_service")


class ModelKind(str, Enum):
    """The two fluid model families."""

    CONSTANT_DELAY = "constant_delay"
    MOVING_AVERAGE = "moving_average"

    @property
    def dimension(self) -> int:
        """State dimension: (q1, q2) or (q1, q2, m1, m2)."""
        return 2 if self is ModelKind.CONSTANT_DELAY else 4

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        """Accept enum values plus the CamelCase spellings used in reports."""
        if isinstance(value, ModelKind):
            return value
        key = value.strip().lower().replace("-", "_")
        aliases = {"constantdelay": cls.CONSTANT_DELAY, "movingaverage": cls.MOVING_AVERAGE}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError as e:
            raise ConfigError(f"Unknown model kind: {value}") from e


class ModelParams(BaseModel):
    """Rates, forcing and delay of a two-queue fluid model."""

    model_config = ConfigDict(frozen=True)

    lam: float = Field(gt=0, description="base arrival rate (jobs/time)")
    mu: float = Field(gt=0, description="service rate per queue (1/time)")
    alpha: float = Field(default=0.0, ge=0, le=1, description="relative forcing amplitude")
    epsilon: float = Field(default=0.0, ge=0, description="perturbation scale")
    gamma: float = Field(default=0.0, ge=0, description="forcing frequency (rad/time)")
    delta: float = Field(default=1.0, gt=0, description="information delay (time)")

    @model_validator(mode="after")
    def validate_nonnegative_rate(self) -> "ModelParams":
        """lambda(t) stays nonnegative only while alpha * epsilon <= 1."""
        for name in ("lam", "mu", "alpha", "epsilon", "gamma", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.alpha * self.epsilon > 1:
            raise ValueError("alpha * epsilon must not exceed 1 (arrival rate would turn negative)")
        return self

    @property
    def amplitude(self) -> float:
        """Effective relative amplitude alpha * epsilon of the arrival rate."""
        return self.alpha * self.epsilon

    def with_delay(self, delta: float) -> "ModelParams":
        """Return a validated copy with a different information delay."""
        return ModelParams(**{**self.model_dump(), "delta": delta})


# --- History functions -------------------------------------------------------


@dataclass(frozen=True)
class ConstantHistory:
    """phi(t) = value on [-Delta, 0]."""

    value: float

    def __call__(self, t: float) -> float:
        return self.value

    def derivative(self, t: float) -> float:
        return 0.0

    def covers(self, delta: float) -> bool:
        return math.isfinite(self.value)


@dataclass(frozen=True)
class TabulatedHistory:
    """phi(t) interpolated by a cubic spline through tabulated samples."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ConfigError("Tabulated history needs matching times/values with at least 2 points")
        if not np.all(np.diff(self.times) > 0):
            raise ConfigError("Tabulated history times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("Tabulated history values must be finite")
        spline = CubicSpline(np.asarray(self.times), np.asarray(self.values))
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_slope", spline.derivative())

    def __call__(self, t: float) -> float:
        return float(self._spline(t))  # type: ignore[attr-defined]

    def derivative(self, t: float) -> float:
        return float(self._slope(t))  # type: ignore[attr-defined]

    def covers(self, delta: float) -> bool:
        tol = 1e-12 * max(1.0, delta)
        return self.times[0] <= -delta + tol and self.times[-1] >= -tol


HistoryComponent = ConstantHistory | TabulatedHistory


@dataclass(frozen=True)
class HistoryFunction:
    """Initial functions on [-Delta, 0], one component per state variable."""

    components: tuple[HistoryComponent, ...]

    @classmethod
    def constant(cls, *values: float) -> "HistoryFunction":
        return cls(tuple(ConstantHistory(float(v)) for v in values))

    @classmethod
    def tabulated(cls, times: Sequence[float], *columns: Sequence[float]) -> "HistoryFunction":
        return cls(tuple(TabulatedHistory(tuple(times), tuple(c)) for c in columns))

    @property
    def dimension(self) -> int:
        return len(self.components)

    def __call__(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.components])

    def derivative(self, t: float) -> np.ndarray:
        return np.array([c.derivative(t) for c in self.components])

    def validate_for(self, kind: ModelKind, delta: float) -> None:
        """Check the component count and that every component covers [-delta, 0]."""
        if self.dimension not in (2, kind.dimension):
            raise ConfigError(
                f"History has {self.dimension} components, {kind.value} needs 2 or {kind.dimension}"
            )
        for i, component in enumerate(self.components):
            if not component.covers(delta):
                raise ConfigError(f"History component {i} is not defined on [-{delta}, 0]")


def window_average(component: Callable[[float], float], delta: float) -> float:
    """(1/Delta) * integral of a history component over [-Delta, 0]."""
    if isinstance(component, ConstantHistory):
        return component.value
    value, _ = quad(component, -delta, 0.0, epsabs=1e-12, epsrel=1e-12, limit=200)
    return value / delta


def prepare_history(kind: ModelKind, history: HistoryFunction, delta: float) -> HistoryFunction:
    """
    Complete a history to the full state dimension of the model.

    For the moving-average model the window averages m_i(0) are computed from the
    queue histories, so the m state starts consistent with its definition. The m
    components are held at m_i(0) on the history segment.
    """
    history.validate_for(kind, delta)
    if kind is ModelKind.CONSTANT_DELAY:
        return history

    m0 = [window_average(history.components[i], delta) for i in range(2)]
    if history.dimension == 4:
        supplied = [history.components[i](0.0) for i in (2, 3)]
        if not np.allclose(supplied, m0, rtol=1e-9, atol=1e-12):
            logger.warning(f"Supplied m(0)={supplied} replaced by window averages {m0}")
    return HistoryFunction(history.components[:2] + tuple(ConstantHistory(m) for m in m0))


# --- Model right-hand sides --------------------------------------------------


def arrival_rate(t: float, p: ModelParams) -> float:
    """lambda(t) = lambda * (1 + alpha * epsilon * sin(gamma t))."""
    return p.lam * (1.0 + p.alpha * p.epsilon * math.sin(p.gamma * t))


def choice_fraction(x1: float, x2: float) -> tuple[float, float]:
    """
    MNL split exp(-x1) / (exp(-x1) + exp(-x2)) between the two queues.

    Evaluated as a logistic of the difference: the smaller fraction comes straight
    from expit and the larger one is its complement, so no exponential of a large
    positive number is ever formed and swapping the arguments swaps the outputs exactly.

    Args:
        x1: Observed level of queue 1
        x2: Observed level of queue 2

    Returns:
        (p1, p2) with p1 + p2 == 1 up to rounding
    """
    if not (math.isfinite(x1) and math.isfinite(x2)):
        raise ValueError(f"choice_fraction needs finite queue levels, got ({x1}, {x2})")
    if x1 >= x2:
        p1 = float(expit(x2 - x1))
        return p1, 1.0 - p1
    p2 = float(expit(x1 - x2))
    return 1.0 - p2, p2


def constant_delay_rhs(t: float, state: np.ndarray, delayed_state: np.ndarray,
                       p: ModelParams) -> np.ndarray:
    """Constant-delay model: arrivals split on the queue lengths seen Delta ago."""
    rate = arrival_rate(t, p)
    p1, p2 = choice_fraction(float(delayed_state[0]), float(delayed_state[1]))
    return np.array([rate * p1 - p.mu * state[0], rate * p2 - p.mu * state[1]])


def moving_average_rhs(t: float, state: np.ndarray, delayed_state: np.ndarray,
                       p: ModelParams) -> np.ndarray:
    """Moving-average model on (q1, q2, m1, m2); choice uses the current window averages."""
    rate = arrival_rate(t, p)
    p1, p2 = choice_fraction(float(state[2]), float(state[3]))
    return np.array([
        rate * p1 - p.mu * state[0],
        rate * p2 - p.mu * state[1],
        (state[0] - delayed_state[0]) / p.delta,
        (state[1] - delayed_state[1]) / p.delta,
    ])


def linear_perturbation_rhs(t: float, state: np.ndarray, delayed_state: np.ndarray,
                            p: ModelParams) -> np.ndarray:
    """Linearized constant-delay perturbation z' = -(lambda(t)/2) z(t - Delta) - mu z."""
    return np.array([-0.5 * arrival_rate(t, p) * delayed_state[0] - p.mu * state[0]])


def linear_moving_average_rhs(t: float, state: np.ndarray, delayed_state: np.ndarray,
                              p: ModelParams) -> np.ndarray:
    """Linearized moving-average perturbation on (u, w)."""
    return np.array([
        -0.5 * arrival_rate(t, p) * state[1] - p.mu * state[0],
        (state[0] - delayed_state[0]) / p.delta,
    ])


RHS_BY_KIND = {
    ModelKind.CONSTANT_DELAY: constant_delay_rhs,
    ModelKind.MOVING_AVERAGE: moving_average_rhs,
}
