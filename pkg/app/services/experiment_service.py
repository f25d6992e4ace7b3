"""Run scenarios, classify trajectories and locate empirical Hopf thresholds."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.integrate import trapezoid
from scipy.signal import find_peaks

from configs.config import get_settings
from configs.logger import get_logger
from configs.scenario import ScenarioConfig
from services.dde_service import IntegrationConfig, Trajectory, integrate
from services.errors import BracketError, ConfigError, NoOscillatoryRegimeError, SignAmbiguityError
from services.fluid_service import mean_infinite_server, rates_from_params
from services.model_service import HistoryFunction, ModelKind, ModelParams, choice_fraction
from services.stability_service import (
    SignRule,
    StabilityReport,
    delta_cr_ma,
    delta_mod_constant,
    delta_mod_ma,
    is_resonant,
    omega_cr_constant,
    omega_ma,
    stability_report,
    threshold_magnitude_ma,
)

logger = get_logger("experiment_service")

MIN_PERIODS = 20


class Verdict(str, Enum):
    CONVERGING = "Converging"
    OSCILLATING = "Oscillating"
    INDETERMINATE = "Indeterminate"


class Classification(BaseModel):
    """Envelope summary of |q1 - q2| after burn-in."""

    model_config = ConfigDict(frozen=True)

    verdict: Verdict
    envelope_ratio: float
    extrema_count: int
    final_amplitude: float


@dataclass
class ScenarioResult:
    trajectory: Trajectory
    report: StabilityReport | None
    classification: Classification
    csv_path: Path
    report_path: Path


@dataclass
class ScanResult:
    threshold: float
    bracket: tuple[float, float]
    probes: dict[float, Classification] = field(default_factory=dict)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def oscillation_frequency(kind: ModelKind, p: ModelParams) -> float | None:
    """Hopf frequency of the model, or None when no oscillatory regime exists."""
    try:
        if kind is ModelKind.CONSTANT_DELAY:
            return omega_cr_constant(p.lam, p.mu) or None
        return omega_ma(p.lam, p.mu, delta_cr_ma(p.lam, p.mu))
    except NoOscillatoryRegimeError:
        return None


def classification_horizon(kind: ModelKind, p: ModelParams) -> float:
    """max(100 Delta, 400 / omega_cr): at least 20 periods after a half burn-in."""
    settings = get_settings()
    horizon = settings.horizon_delays * p.delta
    omega = oscillation_frequency(kind, p)
    if omega:
        horizon = max(horizon, settings.horizon_periods_factor / omega)
    return horizon


def classify_trajectory(traj: Trajectory, burn_in: float | None = None,
                        omega: float | None = None) -> Classification:
    """
    Classify the asynchronous mode q1 - q2 as converging or oscillating.

    Successive local maxima of |q1 - q2| after burn-in are split into quartiles and the
    ratio of the last quartile mean to the first quartile mean measures envelope growth.

    Args:
        traj: Integrated trajectory (kind and params recorded)
        burn_in: Fraction of the horizon discarded first (settings default)
        omega: Oscillation frequency used for the period; derived from the model if omitted

    Returns:
        Classification
    """
    settings = get_settings()
    burn_in = settings.burn_in if burn_in is None else burn_in
    if traj.params is None or traj.kind is None:
        raise ConfigError("Trajectory carries no model kind/parameters to classify against")
    p = traj.params
    omega = omega or oscillation_frequency(traj.kind, p)
    if not omega:
        raise ConfigError("No oscillation frequency available to size the measurement window")
    period = 2 * math.pi / omega

    times, states = traj.forward()
    diff = np.abs(states[:, 0] - states[:, 1])
    start = burn_in * traj.t_end
    if traj.t_end - start < MIN_PERIODS * period:
        raise ConfigError(
            f"Trajectory too short: {traj.t_end - start:.4g} time units after burn-in, "
            f"need {MIN_PERIODS} periods ({MIN_PERIODS * period:.4g})"
        )

    window = diff[times >= start]
    final_amplitude = float(np.max(diff[times >= traj.t_end - period]))
    floor = settings.amplitude_floor * p.lam / (2 * p.mu)

    peaks, _ = find_peaks(window)
    maxima = window[peaks]
    if len(maxima) < 4:
        verdict = Verdict.CONVERGING if final_amplitude <= floor else Verdict.INDETERMINATE
        ratio = 0.0 if final_amplitude <= floor else 1.0
        logger.info(f"Only {len(maxima)} extrema after burn-in: {verdict.value}")
        return Classification(verdict=verdict, envelope_ratio=ratio, extrema_count=len(maxima),
                               final_amplitude=final_amplitude)

    quarter = max(1, len(maxima) // 4)
    first = float(np.mean(maxima[:quarter]))
    last = float(np.mean(maxima[-quarter:]))
    ratio = last / first if first > 0 else 0.0

    if ratio < settings.converging_ratio:
        verdict = Verdict.CONVERGING
    elif ratio > settings.oscillating_ratio and final_amplitude > floor:
        verdict = Verdict.OSCILLATING
    else:
        verdict = Verdict.INDETERMINATE

    logger.info(f"Envelope ratio {ratio:.4f} over {len(maxima)} maxima, "
                f"final amplitude {final_amplitude:.3e}: {verdict.value}")
    return Classification(verdict=verdict, envelope_ratio=ratio, extrema_count=len(maxima),
                          final_amplitude=final_amplitude)


def integrate_and_classify(kind: ModelKind, p: ModelParams, history: HistoryFunction,
                           steps_per_delay: int | None = None, t_end: float | None = None,
                           burn_in: float | None = None) -> tuple[Trajectory, Classification]:
    """
    Integrate on the classification horizon and classify the result.

    An Indeterminate run is re-integrated on a doubled horizon, at most
    `horizon_extensions` times, so the measurement window can clear the transient of a
    trajectory still settling onto its limit cycle. An explicit t_end is never extended.

    Args:
        kind: Model family
        p: Parameters (p.delta is the delay integrated)
        history: Initial functions on [-Delta, 0]
        steps_per_delay: Grid resolution (settings default)
        t_end: Fixed horizon; the classification horizon rule applies when omitted
        burn_in: Fraction of the horizon discarded before classifying

    Returns:
        The last trajectory integrated and its classification
    """
    settings = get_settings()
    steps = steps_per_delay or settings.steps_per_delay
    horizon = t_end or classification_horizon(kind, p)
    extensions = 0 if t_end else settings.horizon_extensions

    for attempt in range(extensions + 1):
        trajectory = integrate(kind, p, history, IntegrationConfig(steps_per_delay=steps, t_end=horizon))
        classification = classify_trajectory(trajectory, burn_in=burn_in)
        if classification.verdict is not Verdict.INDETERMINATE or attempt == extensions:
            break
        logger.info(f"Indeterminate on t_end={horizon:.4g} (ratio {classification.envelope_ratio:.4f}); "
                    f"re-integrating on {2 * horizon:.4g}")
        horizon *= 2
    return trajectory, classification


def integration_config(cfg: ScenarioConfig) -> IntegrationConfig:
    settings = get_settings()
    return IntegrationConfig(
        steps_per_delay=cfg.steps_per_delay or settings.steps_per_delay,
        t_end=cfg.t_end or classification_horizon(cfg.kind, cfg.params),
    )


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """Columns t, q1, q2 (plus m1, m2 for the moving-average model), history segment included."""
    columns = ["q1", "q2", "m1", "m2"][:traj.dimension]
    frame = pd.DataFrame(traj.states, columns=columns)
    frame.insert(0, "t", traj.times)
    return frame


def emit_figure_data(cfg: ScenarioConfig, trajectory: Trajectory | None = None,
                     path: str | Path | None = None) -> Path:
    """Write the trajectory of a scenario as CSV (integrating it first if needed)."""
    trajectory = trajectory or integrate(cfg.kind, cfg.params, cfg.history, integration_config(cfg))
    path = Path(path or cfg.csv_path or Path(get_settings().output_dir) / f"{cfg.name}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(trajectory).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"Wrote {len(trajectory.states)} rows to {path}")
    return path


def report_document(cfg: ScenarioConfig, report: StabilityReport | None,
                    classification: Classification | None) -> dict:
    """JSON-ready document with a fixed key order."""
    return {
        "scenario": cfg.name,
        "kind": cfg.kind.value,
        "params": cfg.params.model_dump(),
        "history": [cfg.history_q1, cfg.history_q2],
        "stability": report.model_dump(mode="json") if report else None,
        "classification": classification.model_dump(mode="json") if classification else None,
    }


def integration_sign_ma(p: ModelParams, history: HistoryFunction, steps_per_delay: int | None = None) -> int:
    """
    Side of Delta_cr on which the forced moving-average model keeps its shifted threshold.

    Direct integrations with the model's own gamma are classified at
    Delta_cr -+ epsilon * |Delta1| / 2. Neither oscillating puts the threshold above
    Delta_cr (+1); both oscillating puts it below (-1).

    Raises:
        ConfigError: alpha * epsilon is zero, so there is no shift to measure
        SignAmbiguityError: the two integrations disagree
    """
    d_cr = delta_cr_ma(p.lam, p.mu)
    offset = 0.5 * p.epsilon * threshold_magnitude_ma(p.lam, p.mu, p.alpha, d_cr)
    if offset == 0:
        raise ConfigError("the integration sign rule needs alpha * epsilon > 0")

    probes = classify_grid(ModelKind.MOVING_AVERAGE, p, history, [d_cr - offset, d_cr + offset],
                           workers=1, steps_per_delay=steps_per_delay)
    verdicts = {f"{d:.6g}": [c.verdict.value] for d, c in probes.items()}
    logger.info(f"Integration sign probes around delta_cr={d_cr:.6g}: {verdicts}")
    oscillating = [c.verdict is Verdict.OSCILLATING for c in probes.values()]
    if not any(oscillating):
        return 1
    if all(oscillating):
        return -1
    raise SignAmbiguityError(f"integrations disagree on the stable side of delta_cr={d_cr:.6g}: {verdicts}",
                             verdicts)


def scenario_integration_sign(cfg: ScenarioConfig) -> int | None:
    """Measured stable side when a forced moving-average scenario uses the integration sign rule."""
    p = cfg.params
    if cfg.kind is not ModelKind.MOVING_AVERAGE or cfg.sign_rule is not SignRule.INTEGRATION:
        return None
    if p.alpha * p.epsilon == 0:
        return None
    if not (cfg.assume_resonant or is_resonant(p.gamma, omega_ma(p.lam, p.mu, delta_cr_ma(p.lam, p.mu)))):
        return None
    return integration_sign_ma(p, cfg.history, cfg.steps_per_delay)


def scenario_report(cfg: ScenarioConfig) -> StabilityReport:
    """Stability report of a scenario, with the integration sign measured when its rule asks for one."""
    return stability_report(cfg.kind, cfg.params, assume_resonant=cfg.assume_resonant, rule=cfg.sign_rule,
                            integration_sign=scenario_integration_sign(cfg))


def safe_report(cfg: ScenarioConfig) -> StabilityReport | None:
    try:
        return scenario_report(cfg)
    except NoOscillatoryRegimeError as e:
        logger.warning(f"No stability report for {cfg.name}: {e}")
        return None


def run_scenario(cfg: ScenarioConfig, output_dir: str | Path | None = None) -> ScenarioResult:
    """
    Integrate a scenario, classify it and write the CSV trajectory plus JSON report.

    Args:
        cfg: Validated scenario
        output_dir: Overrides the settings output directory for files without explicit paths

    Returns:
        ScenarioResult with the written paths
    """
    logger.info(f"Running scenario {cfg.name} ({cfg.kind.value}, delta={cfg.delta})")
    out = Path(output_dir or get_settings().output_dir)

    trajectory, classification = integrate_and_classify(cfg.kind, cfg.params, cfg.history, cfg.steps_per_delay,
                                                        cfg.t_end, cfg.burn_in)
    report = safe_report(cfg)

    csv_path = emit_figure_data(cfg, trajectory, cfg.csv_path or out / f"{cfg.name}.csv")
    report_path = Path(cfg.report_path or out / f"{cfg.name}.json")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report_document(cfg, report, classification), indent=2) + "\n")
    logger.info(f"Wrote report to {report_path}")

    return ScenarioResult(trajectory=trajectory, report=report, classification=classification,
                          csv_path=csv_path, report_path=report_path)


def classify_delay(kind: ModelKind, p: ModelParams, history: HistoryFunction, delta: float,
                   steps_per_delay: int | None = None, burn_in: float | None = None) -> Classification:
    """Classify the model at one delay on the classification horizon."""
    _, classification = integrate_and_classify(kind, p.with_delay(delta), history, steps_per_delay,
                                               burn_in=burn_in)
    return classification


def classify_grid(kind: ModelKind, p: ModelParams, history: HistoryFunction, deltas: list[float],
                  workers: int | None = None, steps_per_delay: int | None = None) -> dict[float, Classification]:
    """Classify several delays, in parallel processes when more than one worker is configured."""
    workers = workers or get_settings().scan_workers
    if workers == 1:
        return {d: classify_delay(kind, p, history, d, steps_per_delay) for d in deltas}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {d: pool.submit(classify_delay, kind, p, history, d, steps_per_delay) for d in deltas}
        return {d: f.result() for d, f in futures.items()}


def empirical_threshold_scan(kind: ModelKind, p: ModelParams, history: HistoryFunction,
                             bracket: tuple[float, float], tolerance: float | None = None,
                             steps_per_delay: int | None = None) -> ScanResult:
    """
    Bisect on the delay for the Converging/Oscillating transition of direct integrations.

    Args:
        kind: Model family
        p: Parameters (p.delta is ignored)
        history: Constant or tabulated initial functions
        bracket: (delta_lo, delta_hi) with Converging at lo and Oscillating at hi
        tolerance: Final bracket width (settings default 1e-3)

    Returns:
        ScanResult whose threshold is the final bracket midpoint
    """
    tolerance = tolerance or get_settings().scan_tolerance
    lo, hi = bracket
    if not 0 < lo < hi:
        raise BracketError(f"Bracket must satisfy 0 < lo < hi, got {bracket}")

    probes: dict[float, Classification] = {}
    probes.update(classify_grid(kind, p, history, [lo, hi], steps_per_delay=steps_per_delay))
    if probes[lo].verdict is not Verdict.CONVERGING or probes[hi].verdict is not Verdict.OSCILLATING:
        raise BracketError(
            f"Bracket [{lo}, {hi}] does not straddle a transition: "
            f"{probes[lo].verdict.value} at lo, {probes[hi].verdict.value} at hi"
        )

    while hi - lo >= tolerance:
        mid = 0.5 * (lo + hi)
        probes[mid] = classify_delay(kind, p, history, mid, steps_per_delay)
        logger.debug(f"Probe delta={mid:.6f}: {probes[mid].verdict.value} "
                     f"(ratio {probes[mid].envelope_ratio:.4f})")
        if probes[mid].verdict is Verdict.OSCILLATING:
            hi = mid
        else:
            lo = mid

    threshold = 0.5 * (lo + hi)
    logger.info(f"Empirical threshold {threshold:.6f} after {len(probes)} probes")
    return ScanResult(threshold=threshold, bracket=(lo, hi), probes=probes)


def monotonicity_violations(probes: dict[float, Classification], margin: float = 0.01) -> list[float]:
    """Delays classified Converging more than `margin` above some Oscillating probe."""
    oscillating = [d for d, c in probes.items() if c.verdict is Verdict.OSCILLATING]
    if not oscillating:
        return []
    first = min(oscillating)
    return sorted(d for d, c in probes.items() if d > first + margin and c.verdict is Verdict.CONVERGING)


def moving_average_consistency(traj: Trajectory) -> float:
    """Largest relative gap between m_i(t) and the trapezoid window average of q_i, for t >= Delta."""
    n = traj.history_steps
    worst = 0.0
    for k in range(2 * n, len(traj.states)):
        for i in range(2):
            window = trapezoid(traj.states[k - n:k + 1, i], dx=traj.dt) / (n * traj.dt)
            m = traj.states[k, 2 + i]
            worst = max(worst, abs(m - window) / max(abs(window), 1e-300))
    return worst


def check_invariants(cfg: ScenarioConfig, samples: int = 100_000, seed: int = 0) -> list[CheckResult]:
    """Run the invariant suite on a scenario; each check reports pass/fail with a detail line."""
    logger.info(f"Checking invariants for {cfg.name}")
    results: list[CheckResult] = []
    rng = np.random.default_rng(seed)
    p = cfg.params
    icfg = integration_config(cfg)

    pairs = rng.uniform(-1e6, 1e6, size=(samples, 2)) * rng.choice([1e-6, 1e-2, 1.0], size=(samples, 1))
    worst = max(abs(sum(choice_fraction(float(a), float(b))) - 1.0) for a, b in pairs)
    results.append(CheckResult("choice_fraction_sum", worst <= 2.3e-16, f"max |p1+p2-1| = {worst:.3e}"))

    trajectory = integrate(cfg.kind, p, cfg.history, icfg)
    again = integrate(cfg.kind, p, cfg.history, icfg)
    same = np.array_equal(trajectory.states, again.states)
    results.append(CheckResult("determinism", same, "bit-identical rerun" if same else "reruns differ"))

    symmetric = integrate(cfg.kind, p, HistoryFunction.constant(cfg.history_q1, cfg.history_q1), icfg)
    gap = float(np.max(np.abs(symmetric.queue_difference())))
    results.append(CheckResult("symmetry", gap < 1e-12, f"max |q1-q2| = {gap:.3e}"))

    times, states = trajectory.forward()
    q0 = float(states[0, 0] + states[0, 1])
    expected = mean_infinite_server(float(times[-1]), q0, rates_from_params(p))
    total = float(states[-1, 0] + states[-1, 1])
    rel = abs(total - expected) / abs(expected)
    results.append(CheckResult("total_mass", rel < 1e-6, f"relative gap at t_end = {rel:.3e}"))

    if cfg.kind is ModelKind.MOVING_AVERAGE:
        rel = moving_average_consistency(trajectory)
        results.append(CheckResult("moving_average_quadrature", rel < 1e-4, f"max relative gap = {rel:.3e}"))

    report = safe_report(cfg)
    if report is not None:
        if report.resonant or report.assume_resonant:
            direct = (delta_mod_constant(p.lam, p.mu, p.alpha, p.epsilon)
                      if cfg.kind is ModelKind.CONSTANT_DELAY
                      else delta_mod_ma(p.lam, p.mu, p.alpha, p.epsilon, rule=cfg.sign_rule,
                                        sign=report.integration_sign))
        else:
            direct = report.delta_cr
        ok = report.delta_mod == direct
        results.append(CheckResult("report_consistency", ok, f"report {report.delta_mod:.6g} vs {direct:.6g}"))

    for r in results:
        logger.info(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return results
