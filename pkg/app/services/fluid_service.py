"""
Mean of the infinite-server queue with time-varying rates.

The mean solves q' = lambda(t) - mu(t) q, so
q(t) = q0 exp(-M(t)) + exp(-M(t)) * int_0^t lambda(s) exp(M(s)) ds with M(t) = int_0^t mu.
Constant and sinusoidal rates use closed forms; tabulated rates use quadrature.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from configs.logger import get_logger
from services.errors import ConfigError
from services.model_service import ModelParams

logger = get_logger("fluid_service")

QUADRATURE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ConstantRates:
    lam: float
    mu: float

    def __post_init__(self) -> None:
        if self.lam < 0 or self.mu <= 0:
            raise ConfigError("Constant rates need lambda >= 0 and mu > 0")

    def arrival(self, t: float) -> float:
        return self.lam

    def service(self, t: float) -> float:
        return self.mu

    def cumulative_service(self, t: float) -> float:
        return self.mu * t


@dataclass(frozen=True)
class SinusoidalRates:
    """lambda(t) = lam * (1 + amplitude * sin(gamma t)) with constant mu."""

    lam: float
    mu: float
    amplitude: float
    gamma: float

    def __post_init__(self) -> None:
        if self.lam < 0 or self.mu <= 0:
            raise ConfigError("Sinusoidal rates need lambda >= 0 and mu > 0")
        if abs(self.amplitude) > 1:
            raise ConfigError("Relative amplitude above 1 makes the arrival rate negative")

    def arrival(self, t: float) -> float:
        return self.lam * (1.0 + self.amplitude * math.sin(self.gamma * t))

    def service(self, t: float) -> float:
        return self.mu

    def cumulative_service(self, t: float) -> float:
        return self.mu * t


@dataclass(frozen=True)
class TabulatedRates:
    """Arrival and service rates interpolated by cubic splines through tabulated samples."""

    times: tuple[float, ...]
    arrivals: tuple[float, ...]
    services: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.arrivals) == len(self.services)) or len(self.times) < 2:
            raise ConfigError("Tabulated rates need matching columns with at least 2 rows")
        if self.times[0] > 0 or not np.all(np.diff(self.times) > 0):
            raise ConfigError("Tabulated rate times must increase and start at or before 0")
        arrival = CubicSpline(np.asarray(self.times), np.asarray(self.arrivals))
        service = CubicSpline(np.asarray(self.times), np.asarray(self.services))
        grid = np.linspace(self.times[0], self.times[-1], 20 * len(self.times))
        if np.any(arrival(grid) < 0) or np.any(service(grid) <= 0):
            raise ConfigError("Tabulated rates need lambda(t) >= 0 and mu(t) > 0 on the table range")
        object.__setattr__(self, "_arrival", arrival)
        object.__setattr__(self, "_service", service)
        object.__setattr__(self, "_service_integral", service.antiderivative())

    @property
    def horizon(self) -> float:
        return self.times[-1]

    def arrival(self, t: float) -> float:
        return float(self._arrival(t))  # type: ignore[attr-defined]

    def service(self, t: float) -> float:
        return float(self._service(t))  # type: ignore[attr-defined]

    def cumulative_service(self, t: float) -> float:
        integral = self._service_integral  # type: ignore[attr-defined]
        return float(integral(t) - integral(0.0))


RateFunction = ConstantRates | SinusoidalRates | TabulatedRates


def rates_from_params(p: ModelParams) -> SinusoidalRates:
    """The arrival/service pair driving both fluid models (amplitude alpha * epsilon)."""
    return SinusoidalRates(lam=p.lam, mu=p.mu, amplitude=p.amplitude, gamma=p.gamma)


def sinusoidal_mean_from_zero(t: float, rates: SinusoidalRates) -> float:
    """Closed-form mean started empty, for sinusoidal arrivals and constant service."""
    lam, mu, a, g = rates.lam, rates.mu, rates.amplitude, rates.gamma
    decay = math.exp(-mu * t)
    forced = lam * a / (mu ** 2 + g ** 2)
    return (lam / mu) * (1.0 - decay) + forced * (mu * math.sin(g * t) - g * math.cos(g * t) + decay * g)


def mean_by_quadrature(t: float, q0: float, rates: RateFunction) -> float:
    """Evaluate the general mean formula by adaptive quadrature."""
    total = rates.cumulative_service(t)
    integral, _ = quad(
        lambda s: rates.arrival(s) * math.exp(rates.cumulative_service(s) - total),
        0.0, t,
        epsabs=QUADRATURE_TOLERANCE, epsrel=QUADRATURE_TOLERANCE, limit=500,
    )
    return q0 * math.exp(-total) + integral


def mean_infinite_server(t: float, q0: float, rates: RateFunction) -> float:
    """
    Mean number in system of the M_t/M_t/infinity queue.

    Args:
        t: Time (>= 0)
        q0: Mean at time 0
        rates: Constant, sinusoidal or tabulated rates

    Returns:
        The mean at time t
    """
    if t < 0:
        raise ValueError(f"mean_infinite_server needs t >= 0, got {t}")
    if isinstance(rates, ConstantRates):
        ratio = rates.lam / rates.mu
        return ratio + (q0 - ratio) * math.exp(-rates.mu * t)
    if isinstance(rates, SinusoidalRates):
        return q0 * math.exp(-rates.mu * t) + sinusoidal_mean_from_zero(t, rates)
    if t > rates.horizon:
        raise ValueError(f"t={t} beyond the tabulated horizon {rates.horizon}")
    return mean_by_quadrature(t, q0, rates)


def mean_infinite_server_steady(t: float, rates: ConstantRates | SinusoidalRates) -> float:
    """
    Periodic steady state of the mean (the e^{-mu t} transient dropped).

    The forced term is lambda * amplitude / (mu^2 + gamma^2) with no extra lambda/2
    prefactor; that is the form solving q' = lambda(t) - mu q. A variant with the
    prefactor circulates for the forced two-queue total and is not used (see DESIGN.md).
    """
    if isinstance(rates, ConstantRates):
        return rates.lam / rates.mu
    if not isinstance(rates, SinusoidalRates):
        raise ConfigError("Steady-state mean needs constant or sinusoidal rates")
    lam, mu, a, g = rates.lam, rates.mu, rates.amplitude, rates.gamma
    return lam / mu + (lam * a / (mu ** 2 + g ** 2)) * (mu * math.sin(g * t) - g * math.cos(g * t))


def equilibrium_per_queue(t: float, rates: ConstantRates | SinusoidalRates) -> float:
    """Symmetric equilibrium q1 = q2 = q_inf(t) / 2 of both fluid models."""
    return 0.5 * mean_infinite_server_steady(t, rates)
