"""
Fixed-step method-of-steps integrator for DDEs with one constant delay.

The grid is aligned to the delay (dt = Delta / N), so the lag of a full-step stage
lands on a stored node and only the half-step stages need the cubic Hermite dense
output. Lags that fall on [-Delta, 0] are read from the history function itself.
"""

from collections.abc import Callable
from dataclasses import dataclass
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from configs.logger import get_logger
from services.errors import ConfigError, NumericalFailureError
from services.model_service import (
    RHS_BY_KIND,
    HistoryFunction,
    ModelKind,
    ModelParams,
    prepare_history,
)

logger = get_logger("dde_service")

RightHandSide = Callable[[float, np.ndarray, np.ndarray, ModelParams], np.ndarray]


class IntegrationConfig(BaseModel):
    """Grid resolution (steps per delay interval) and horizon."""

    model_config = ConfigDict(frozen=True)

    steps_per_delay: int = Field(default=128, ge=16)
    t_end: float = Field(gt=0)


@dataclass(frozen=True)
class Trajectory:
    """
    Uniformly stepped solution including the history segment [-Delta, 0].

    Node k sits at t = (k - history_steps) * dt. Step k runs from node k to node k + 1
    and carries the slopes at both of its ends, which makes the Hermite interpolant
    C1 inside every step while allowing the derivative jump that DDE solutions have
    at t = 0.
    """

    dt: float
    history_steps: int
    states: np.ndarray
    slopes_start: np.ndarray
    slopes_end: np.ndarray
    kind: ModelKind | None = None
    params: ModelParams | None = None

    @property
    def t0(self) -> float:
        return -self.history_steps * self.dt

    @property
    def t_end(self) -> float:
        return (len(self.states) - 1 - self.history_steps) * self.dt

    @property
    def times(self) -> np.ndarray:
        return (np.arange(len(self.states)) - self.history_steps) * self.dt

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def queue_difference(self) -> np.ndarray:
        """q1 - q2 on every node."""
        return self.states[:, 0] - self.states[:, 1]

    def forward(self) -> tuple[np.ndarray, np.ndarray]:
        """Times and states on [0, t_end] (history segment dropped)."""
        return self.times[self.history_steps:], self.states[self.history_steps:]


def hermite(y0: np.ndarray, y1: np.ndarray, d0: np.ndarray, d1: np.ndarray,
            theta: float, h: float) -> np.ndarray:
    """Cubic Hermite value at fraction theta of a step of length h."""
    dp0 = d0 * h
    dp1 = d1 * h
    return y0 + theta * (
        dp0 + theta * (-2 * dp0 - dp1 - 3 * y0 + 3 * y1 + theta * (dp0 + dp1 + 2 * y0 - 2 * y1))
    )


def sample(traj: Trajectory, t: float) -> np.ndarray:
    """
    Evaluate the dense output of a trajectory.

    Args:
        traj: An integrated trajectory
        t: Time in [t0, t_end] (history segment included)

    Returns:
        State vector at t; stored nodes are returned exactly
    """
    t0, t_end = traj.t0, traj.t_end
    slack = 1e-12 * traj.dt
    if not (t0 - slack <= t <= t_end + slack):
        raise ValueError(f"t={t} outside trajectory range [{t0}, {t_end}]")

    position = (t - t0) / traj.dt
    node = int(round(position))
    if abs(position - node) < 1e-9:
        return traj.states[node].copy()

    step = min(int(math.floor(position)), len(traj.states) - 2)
    theta = position - step
    return hermite(traj.states[step], traj.states[step + 1],
                   traj.slopes_start[step], traj.slopes_end[step], theta, traj.dt)


def integrate_system(rhs: RightHandSide, p: ModelParams, history: HistoryFunction,
                     cfg: IntegrationConfig, kind: ModelKind | None = None) -> Trajectory:
    """
    Integrate y'(t) = rhs(t, y(t), y(t - Delta), p) with classic RK4 on [0, t_end].

    Args:
        rhs: Right-hand side taking (t, state, delayed_state, params)
        p: Model parameters (p.delta is the lag)
        history: Initial function on [-Delta, 0] of the full state dimension
        cfg: Steps per delay and horizon
        kind: Model family recorded on the trajectory, if any

    Returns:
        Trajectory on [-Delta, t_end]
    """
    n_hist = cfg.steps_per_delay
    dt = p.delta / n_hist
    n_steps = max(1, math.ceil(cfg.t_end / dt - 1e-9))
    n_nodes = n_hist + n_steps + 1
    dim = history.dimension

    states = np.empty((n_nodes, dim))
    slopes_start = np.empty((n_nodes - 1, dim))
    slopes_end = np.empty((n_nodes - 1, dim))

    for k in range(n_hist + 1):
        t = (k - n_hist) * dt
        states[k] = history(t)
        if not np.all(np.isfinite(states[k])):
            raise ConfigError(f"History is not finite at t={t}")
    for k in range(n_hist):
        slopes_start[k] = history.derivative((k - n_hist) * dt)
        slopes_end[k] = history.derivative((k + 1 - n_hist) * dt)

    def lagged_midpoint(j: int) -> np.ndarray:
        # midpoint of global step j, i.e. t_j + dt/2 - Delta
        if j < n_hist:
            return history((j + 0.5 - n_hist) * dt)
        return 0.5 * (states[j] + states[j + 1]) + 0.125 * dt * (slopes_start[j] - slopes_end[j])

    logger.info(f"Integrating {kind.value if kind else rhs.__name__}: delta={p.delta}, "
                f"dt={dt:.6g}, steps={n_steps}")

    y = states[n_hist].copy()
    k1 = rhs(0.0, y, states[0], p)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n_steps):
            t = j * dt
            node = n_hist + j
            try:
                lag_mid = lagged_midpoint(j)
                k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1, lag_mid, p)
                k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2, lag_mid, p)
                k4 = rhs(t + dt, y + dt * k3, states[j + 1], p)
                y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not np.all(np.isfinite(y)):
                    raise ValueError("non-finite state")
                k_next = rhs(t + dt, y, states[j + 1], p)
            except ValueError as e:
                logger.error(f"Integration blew up near t={t + dt:.6g}: {e}")
                raise NumericalFailureError(f"Non-finite state near t={t + dt:.6g}", time=t + dt) from e

            states[node + 1] = y
            slopes_start[node] = k1
            slopes_end[node] = k_next
            k1 = k_next

    logger.info(f"Integration finished at t={n_steps * dt:.6g}")
    return Trajectory(dt=dt, history_steps=n_hist, states=states, slopes_start=slopes_start,
                      slopes_end=slopes_end, kind=kind, params=p)


def integrate(kind: ModelKind, p: ModelParams, history: HistoryFunction,
              cfg: IntegrationConfig) -> Trajectory:
    """Integrate one of the two fluid models from the given history."""
    full_history = prepare_history(kind, history, p.delta)
    return integrate_system(RHS_BY_KIND[kind], p, full_history, cfg, kind=kind)
