"""
Critical delays, slow flows and resonance-shifted thresholds of both fluid models.

Linearizing about the symmetric equilibrium gives a Hopf bifurcation at Delta_cr with
frequency omega_cr. Under forcing at gamma = 2 omega_cr, a two-timescale expansion with
Delta = Delta_cr + epsilon * Delta1 reduces the oscillation amplitudes (A, B) to the
linear slow flow (A, B)' = K (A, B); the sign pattern of det(K - rI) = a0 + a1 r + r^2
locates the shifted threshold Delta_mod.
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import brentq

from configs.config import get_settings
from configs.logger import get_logger
from services.errors import ConfigError, NoOscillatoryRegimeError, SignAmbiguityError
from services.model_service import ModelKind, ModelParams

logger = get_logger("stability_service")

ROOT_SCAN_POINTS = 10_000
RESIDUAL_TOLERANCE = 1e-8
SIGN_SCAN_POINTS = 801


class SignRule(str, Enum):
    """How the sign of the moving-average detuning threshold is chosen."""

    INTEGRATION = "integration"
    ROUTH_HURWITZ = "routh_hurwitz"
    THEOREM = "theorem"


@dataclass(frozen=True)
class SlowFlowMatrix:
    """K = [[K1, K2], [K3, K4]] of the slow flow, in units of 1/slow-time."""

    k: np.ndarray

    def __post_init__(self) -> None:
        if self.k.shape != (2, 2) or not np.all(np.isfinite(self.k)):
            raise ValueError("Slow-flow matrix must be a finite 2x2 array")

    @classmethod
    def from_entries(cls, k1: float, k2: float, k3: float, k4: float) -> "SlowFlowMatrix":
        return cls(np.array([[k1, k2], [k3, k4]], dtype=float))

    @property
    def entries(self) -> tuple[float, float, float, float]:
        return float(self.k[0, 0]), float(self.k[0, 1]), float(self.k[1, 0]), float(self.k[1, 1])

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.k)

    def max_real_part(self) -> float:
        return float(np.max(self.eigenvalues().real))


class RouthHurwitz(BaseModel):
    """Coefficients of det(K - rI) = a0 + a1 r + a2 r^2."""

    model_config = ConfigDict(frozen=True)

    a0: float
    a1: float
    a2: float = 1.0

    @property
    def stable(self) -> bool:
        """Both roots in the open left half-plane iff every coefficient is positive."""
        return self.a0 > 0 and self.a1 > 0 and self.a2 > 0

    def signs(self) -> str:
        return f"a0:{'+' if self.a0 > 0 else '-'} a1:{'+' if self.a1 > 0 else '-'}"


class StabilityReport(BaseModel):
    """Thresholds of one model at one parameter set."""

    kind: ModelKind
    omega_cr: float
    delta_cr: float
    gamma: float
    gamma_resonant: float
    resonant: bool
    assume_resonant: bool = False
    detuning: float
    delta1_threshold: float
    delta_mod: float
    predicted_stable: bool
    coefficients: RouthHurwitz
    sign_rule: SignRule | None = None
    integration_sign: int | None = None
    delta_mod_routh_hurwitz: float | None = None
    delta_mod_theorem: float | None = None
    sign_conflict: bool = False


def routh_hurwitz(k: SlowFlowMatrix) -> RouthHurwitz:
    """Characteristic coefficients a0 = det K, a1 = -trace K, a2 = 1."""
    return RouthHurwitz(a0=float(np.linalg.det(k.k)), a1=-float(np.trace(k.k)), a2=1.0)


# --- Constant-delay model ----------------------------------------------------


def omega_cr_constant(lam: float, mu: float) -> float:
    """Hopf frequency (1/2) sqrt(lambda^2 - 4 mu^2) of the constant-delay model."""
    radicand = lam ** 2 - 4 * mu ** 2
    if radicand < 0:
        raise NoOscillatoryRegimeError(
            f"no oscillatory instability: lambda={lam} < 2*mu={2 * mu}, system stable for all delays"
        )
    return 0.5 * math.sqrt(radicand)


def delta_cr_constant(lam: float, mu: float) -> float:
    """Critical delay 2 arccos(-2 mu / lambda) / sqrt(lambda^2 - 4 mu^2)."""
    if lam <= 2 * mu:
        raise NoOscillatoryRegimeError(
            f"no oscillatory instability: lambda={lam} <= 2*mu={2 * mu}, system stable for all delays"
        )
    return 2 * math.acos(-2 * mu / lam) / math.sqrt(lam ** 2 - 4 * mu ** 2)


def slow_flow_constant(lam: float, mu: float, alpha: float, delta1: float) -> SlowFlowMatrix:
    """Slow-flow matrix of the constant-delay model at detuning delta1."""
    w = omega_cr_constant(lam, mu)
    d = delta_cr_constant(lam, mu)
    den = 2 * (d ** 2 * w ** 2 + (d * mu + 1) ** 2)
    mixed = d * mu ** 2 - d * w ** 2 + mu
    summed = d * mu ** 2 + d * w ** 2 + mu

    k1 = -w * (2 * alpha * d * mu + alpha - 2 * delta1 * w) / den
    k2 = (alpha * mixed - 2 * delta1 * w * summed) / den
    k3 = (alpha * mixed + 2 * delta1 * w * summed) / den
    k4 = w * (2 * alpha * d * mu + alpha + 2 * delta1 * w) / den
    return SlowFlowMatrix.from_entries(k1, k2, k3, k4)


def closed_form_coefficients_constant(lam: float, mu: float, alpha: float,
                                      delta1: float) -> RouthHurwitz:
    """a0, a1 of the constant-delay slow flow written directly in lambda and mu."""
    d = delta_cr_constant(lam, mu)
    den = d ** 2 * lam ** 2 + 8 * d * mu + 4
    a0 = lam ** 2 * (delta1 ** 2 * (lam ** 2 - 4 * mu ** 2) - alpha ** 2) / (4 * den)
    a1 = -2 * delta1 * (lam ** 2 - 4 * mu ** 2) / den
    return RouthHurwitz(a0=a0, a1=a1)


def delta1_threshold_constant(lam: float, mu: float, alpha: float) -> float:
    """Detuning below which the forced slow flow is stable: -sqrt(alpha^2 / (lambda^2 - 4 mu^2))."""
    if lam <= 2 * mu:
        raise NoOscillatoryRegimeError(f"no oscillatory instability for lambda={lam}, mu={mu}")
    return -math.sqrt(alpha ** 2 / (lam ** 2 - 4 * mu ** 2))


def delta_mod_constant(lam: float, mu: float, alpha: float, epsilon: float) -> float:
    """Resonance-shifted critical delay of the constant-delay model."""
    return delta_cr_constant(lam, mu) + epsilon * delta1_threshold_constant(lam, mu, alpha)


# --- Moving-average model ----------------------------------------------------


def omega_ma(lam: float, mu: float, delta: float) -> float:
    """Oscillation frequency sqrt(lambda / Delta - mu^2) of the moving-average model."""
    if delta <= 0:
        raise ConfigError(f"delay must be positive, got {delta}")
    radicand = lam / delta - mu ** 2
    if radicand < 0 or delta >= lam / mu ** 2:
        raise NoOscillatoryRegimeError(
            f"frequency not real: delay {delta} outside oscillatory regime (0, {lam / mu ** 2})"
        )
    return math.sqrt(radicand)


def sin_residual_ma(lam: float, mu: float, delta: float) -> float:
    """Imaginary-part condition sin(Delta w) + (2 mu Delta / lambda) w."""
    w = omega_ma(lam, mu, delta)
    return math.sin(delta * w) + 2 * mu * delta * w / lam


def cos_residual_ma(lam: float, mu: float, delta: float) -> float:
    """Real-part condition cos(Delta w) + 1 - 2 mu^2 Delta / lambda."""
    w = omega_ma(lam, mu, delta)
    return math.cos(delta * w) + 1 - 2 * mu ** 2 * delta / lam


def combined_residual_ma(lam: float, mu: float, delta: float) -> float:
    """Sum of the squared sin and cos conditions (never negative)."""
    w = omega_ma(lam, mu, delta)
    return (2 + (2 - 4 * delta * mu ** 2 / lam) * math.cos(delta * w)
            + (4 * delta * mu / lam) * w * math.sin(delta * w))


def characteristic_residual_ma(lam: float, mu: float, delta: float) -> complex:
    """Residual of r = lambda/(2 Delta r) (e^{-r Delta} - 1) - mu at r = i omega."""
    r = 1j * omega_ma(lam, mu, delta)
    return r - (lam / (2 * delta * r)) * (np.exp(-r * delta) - 1) + mu


def delta_cr_ma(lam: float, mu: float) -> float:
    """
    Smallest critical delay of the moving-average model.

    The combined condition is a sum of squares, so roots are bracketed on the sin
    condition and accepted only where the cos condition also vanishes.

    Args:
        lam: Base arrival rate
        mu: Service rate

    Returns:
        Delta_cr in (0, lambda / mu^2)
    """
    if lam <= 0 or mu <= 0:
        raise ConfigError("delta_cr_ma needs lambda > 0 and mu > 0")
    upper = lam / mu ** 2
    grid = upper * np.arange(1, ROOT_SCAN_POINTS) / ROOT_SCAN_POINTS
    values = np.array([sin_residual_ma(lam, mu, d) for d in grid])

    for i in range(len(grid) - 1):
        if values[i] == 0.0:
            root = float(grid[i])
        elif values[i] * values[i + 1] < 0:
            root = brentq(lambda d: sin_residual_ma(lam, mu, d), grid[i], grid[i + 1],
                          xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        else:
            continue
        cos_res = cos_residual_ma(lam, mu, root)
        if abs(cos_res) < RESIDUAL_TOLERANCE:
            logger.debug(f"delta_cr_ma root {root:.12g}: sin={sin_residual_ma(lam, mu, root):.2e}, "
                         f"cos={cos_res:.2e}")
            return root
        logger.debug(f"Rejected sin-only root {root:.6g} (cos residual {cos_res:.2e})")

    raise NoOscillatoryRegimeError(f"no critical delay in oscillatory regime (0, {upper})")


def _ma_denominator(lam: float, mu: float, d: float) -> float:
    return d * (d * (8 * mu ** 3 * d - lam ** 2 - 12 * lam * mu + 12 * mu ** 2) - 16 * lam)


def slow_flow_ma(lam: float, mu: float, alpha: float, delta1: float,
                 delta_cr: float | None = None) -> SlowFlowMatrix:
    """Slow-flow matrix of the moving-average model at detuning delta1."""
    d = delta_cr_ma(lam, mu) if delta_cr is None else delta_cr
    if not 0 < d < lam / mu ** 2:
        raise NoOscillatoryRegimeError(f"critical delay {d} outside (0, {lam / mu ** 2})")
    w = math.sqrt(lam / d - mu ** 2)
    den = _ma_denominator(lam, mu, d)
    lag_gap = lam - mu ** 2 * d

    k1 = (alpha * d * w * (mu * d * (-4 * mu ** 2 * d + 3 * lam - 6 * mu) + 4 * lam)
          - 2 * delta1 * lag_gap * (lam - 2 * mu * (mu * d + 1))) / den
    k2 = (alpha * d * lag_gap * (-4 * mu ** 2 * d + lam - 6 * mu)
          + delta1 * w * (d * (-4 * mu ** 3 * d + lam ** 2 + 8 * lam * mu - 4 * mu ** 2) + 8 * lam)) / den
    k3 = (alpha * d * lag_gap * (-4 * mu ** 2 * d + lam - 6 * mu)
          + delta1 * w * (d * (4 * mu ** 3 * d - lam ** 2 - 8 * lam * mu + 4 * mu ** 2) - 8 * lam)) / den
    k4 = (alpha * d * w * (mu * d * (4 * mu ** 2 * d - 3 * lam + 6 * mu) - 4 * lam)
          - 2 * delta1 * (-2 * mu ** 2 * d + lam - 2 * mu) * lag_gap) / den
    return SlowFlowMatrix.from_entries(k1, k2, k3, k4)


def closed_form_coefficients_ma(lam: float, mu: float, alpha: float, delta1: float,
                                delta_cr: float | None = None) -> RouthHurwitz:
    """a0, a1 of the moving-average slow flow in closed form."""
    d = delta_cr_ma(lam, mu) if delta_cr is None else delta_cr
    inner = -d * lam ** 2 - 4 * lam * (3 * d * mu + 4) + 4 * d * mu ** 2 * (2 * d * mu + 3)
    lag_gap = lam - d * mu ** 2
    a0 = -(lam * lag_gap * (delta1 ** 2 * (d * (lam + 4 * mu) + 4) - alpha ** 2 * d ** 2)) / (d ** 3 * inner)
    a1 = 4 * delta1 * lag_gap * (lam - 2 * mu * (d * mu + 1)) / (d * inner)
    return RouthHurwitz(a0=a0, a1=a1)


def threshold_magnitude_ma(lam: float, mu: float, alpha: float, delta_cr: float) -> float:
    """|Delta1| at which a0 changes sign: sqrt(alpha^2 Dcr^2 / (Dcr lambda + 4 Dcr mu + 4))."""
    return math.sqrt(alpha ** 2 * delta_cr ** 2 / (delta_cr * lam + 4 * delta_cr * mu + 4))


def theorem_sign_ma(lam: float, mu: float, delta_cr: float) -> int:
    """Sign rule stated alongside the threshold: + when Dcr > (lambda - 2 mu) / (2 mu^2)."""
    return 1 if delta_cr > (lam - 2 * mu) / (2 * mu ** 2) else -1


def routh_hurwitz_sign_ma(lam: float, mu: float, alpha: float, delta_cr: float) -> int:
    """
    Side of zero on which the moving-average slow flow has a stable tongue.

    Scans delta1 over +-2 * magnitude with the slow-flow matrix and reads the
    Routh-Hurwitz signs directly.
    """
    magnitude = threshold_magnitude_ma(lam, mu, alpha, delta_cr)
    grid = np.linspace(-2 * magnitude, 2 * magnitude, SIGN_SCAN_POINTS)
    patterns: dict[str, list[str]] = {"negative": [], "positive": []}
    stable = {"negative": False, "positive": False}

    for d1 in grid:
        if abs(d1) <= 1e-12 * magnitude:
            continue
        side = "negative" if d1 < 0 else "positive"
        coefficients = routh_hurwitz(slow_flow_ma(lam, mu, alpha, float(d1), delta_cr=delta_cr))
        pattern = coefficients.signs()
        if pattern not in patterns[side]:
            patterns[side].append(pattern)
        stable[side] = stable[side] or coefficients.stable

    if stable["negative"] == stable["positive"]:
        logger.error(f"Ambiguous stable side of the moving-average slow flow: {patterns}")
        raise SignAmbiguityError(
            f"cannot identify a unique stable side (a0/a1 sign patterns: {patterns})", patterns
        )
    return -1 if stable["negative"] else 1


def delta1_threshold_ma(lam: float, mu: float, alpha: float,
                        rule: SignRule = SignRule.ROUTH_HURWITZ,
                        delta_cr: float | None = None, sign: int | None = None) -> float:
    """
    Signed detuning threshold of the moving-average model.

    The magnitude comes from the a0 sign change. With ROUTH_HURWITZ the sign is the
    side where a0 > 0 and a1 > 0; with THEOREM it follows the Dcr vs (lambda - 2 mu)/(2 mu^2)
    rule; with INTEGRATION it is the side measured by direct integration and must be passed
    in as `sign` (see experiment_service.integration_sign_ma).
    """
    if alpha == 0:
        return 0.0
    d = delta_cr_ma(lam, mu) if delta_cr is None else delta_cr
    magnitude = threshold_magnitude_ma(lam, mu, alpha, d)
    if rule is SignRule.THEOREM:
        return theorem_sign_ma(lam, mu, d) * magnitude
    if rule is SignRule.ROUTH_HURWITZ:
        return routh_hurwitz_sign_ma(lam, mu, alpha, d) * magnitude
    if sign is None or sign not in (-1, 1):
        raise ConfigError(f"the integration sign rule needs a measured sign of +1 or -1, got {sign!r}")
    return sign * magnitude


def delta_mod_ma(lam: float, mu: float, alpha: float, epsilon: float,
                 rule: SignRule = SignRule.ROUTH_HURWITZ, sign: int | None = None) -> float:
    """Resonance-shifted critical delay of the moving-average model."""
    d = delta_cr_ma(lam, mu)
    return d + epsilon * delta1_threshold_ma(lam, mu, alpha, rule=rule, delta_cr=d, sign=sign)


# --- Reports -----------------------------------------------------------------


def is_resonant(gamma: float, omega_cr: float, tolerance: float | None = None) -> bool:
    """True when gamma = 2 omega_cr within the relative tolerance."""
    tol = get_settings().resonance_tolerance if tolerance is None else tolerance
    return abs(gamma - 2 * omega_cr) / omega_cr < tol


def stability_report(kind: ModelKind, p: ModelParams, assume_resonant: bool = False,
                     rule: SignRule = SignRule.ROUTH_HURWITZ,
                     integration_sign: int | None = None) -> StabilityReport:
    """
    Collect the critical and resonance-shifted thresholds for one parameter set.

    Args:
        kind: Model family
        p: Parameters; p.delta fixes the detuning at which coefficients are reported
        assume_resonant: Evaluate the resonant theory even when gamma != 2 omega_cr
        rule: Sign rule for the moving-average detuning threshold
        integration_sign: Stable side measured by integration, required by SignRule.INTEGRATION

    Returns:
        StabilityReport; off resonance delta_mod equals delta_cr
    """
    logger.info(f"Stability report for {kind.value}: lambda={p.lam}, mu={p.mu}, alpha={p.alpha}, "
                f"epsilon={p.epsilon}, gamma={p.gamma}")

    if kind is ModelKind.CONSTANT_DELAY:
        omega = omega_cr_constant(p.lam, p.mu)
        d_cr = delta_cr_constant(p.lam, p.mu)
    else:
        d_cr = delta_cr_ma(p.lam, p.mu)
        omega = omega_ma(p.lam, p.mu, d_cr)

    resonant = is_resonant(p.gamma, omega)
    forced = resonant or assume_resonant
    if not resonant:
        logger.warning(f"gamma={p.gamma} is not 2*omega_cr={2 * omega:.6g}"
                       + ("; evaluating resonant theory anyway" if assume_resonant else
                          "; forcing has no first-order effect"))
    alpha = p.alpha if forced and p.epsilon > 0 else 0.0
    detuning = (p.delta - d_cr) / p.epsilon if p.epsilon > 0 else 0.0

    extras: dict[str, object] = {}
    if kind is ModelKind.CONSTANT_DELAY:
        threshold = delta1_threshold_constant(p.lam, p.mu, alpha)
        coefficients = routh_hurwitz(slow_flow_constant(p.lam, p.mu, alpha, detuning))
    else:
        threshold = delta1_threshold_ma(p.lam, p.mu, alpha, rule=rule, delta_cr=d_cr, sign=integration_sign)
        coefficients = routh_hurwitz(slow_flow_ma(p.lam, p.mu, alpha, detuning, delta_cr=d_cr))
        rh = delta1_threshold_ma(p.lam, p.mu, alpha, rule=SignRule.ROUTH_HURWITZ, delta_cr=d_cr)
        theorem = delta1_threshold_ma(p.lam, p.mu, alpha, rule=SignRule.THEOREM, delta_cr=d_cr)
        conflict = not (threshold == rh == theorem)
        if conflict:
            logger.warning(f"Sign rules disagree: chosen {rule.value} gives {d_cr + p.epsilon * threshold:.6g}, "
                           f"Routh-Hurwitz {d_cr + p.epsilon * rh:.6g}, "
                           f"theorem {d_cr + p.epsilon * theorem:.6g}")
        extras = {
            "sign_rule": rule,
            "integration_sign": integration_sign if rule is SignRule.INTEGRATION else None,
            "delta_mod_routh_hurwitz": d_cr + p.epsilon * rh,
            "delta_mod_theorem": d_cr + p.epsilon * theorem,
            "sign_conflict": conflict,
        }

    delta_mod = d_cr + p.epsilon * threshold
    report = StabilityReport(
        kind=kind,
        omega_cr=omega,
        delta_cr=d_cr,
        gamma=p.gamma,
        gamma_resonant=2 * omega,
        resonant=resonant,
        assume_resonant=assume_resonant,
        detuning=detuning,
        delta1_threshold=threshold,
        delta_mod=delta_mod,
        predicted_stable=p.delta < delta_mod,
        coefficients=coefficients,
        **extras,
    )
    logger.info(f"delta_cr={d_cr:.6g}, delta_mod={delta_mod:.6g}, resonant={resonant}")
    return report
