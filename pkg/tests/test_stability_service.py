import math

import numpy as np
import pytest
from scipy.optimize import bisect

from services.errors import ConfigError, NoOscillatoryRegimeError
from services.model_service import ModelKind, ModelParams
from services.stability_service import (
    RouthHurwitz,
    SignRule,
    SlowFlowMatrix,
    characteristic_residual_ma,
    closed_form_coefficients_constant,
    closed_form_coefficients_ma,
    combined_residual_ma,
    cos_residual_ma,
    delta1_threshold_constant,
    delta1_threshold_ma,
    delta_cr_constant,
    delta_cr_ma,
    delta_mod_constant,
    delta_mod_ma,
    is_resonant,
    omega_cr_constant,
    omega_ma,
    routh_hurwitz,
    sin_residual_ma,
    slow_flow_constant,
    slow_flow_ma,
    stability_report,
    theorem_sign_ma,
    threshold_magnitude_ma,
)

# --- constant delay -----------------------------------------------------------


@pytest.mark.parametrize("lam, expected", [(3, math.sqrt(5) / 2), (10, math.sqrt(96) / 2)])
def test_omega_cr_constant(lam, expected):
    assert omega_cr_constant(lam, 1) == pytest.approx(expected, rel=1e-15)


def test_omega_cr_constant_at_boundary():
    assert omega_cr_constant(2, 1) == 0.0


def test_omega_cr_constant_without_oscillation():
    with pytest.raises(NoOscillatoryRegimeError):
        omega_cr_constant(1, 1)


@pytest.mark.parametrize("lam, expected", [(3, 2.0577), (10, 0.3617)])
def test_delta_cr_constant(lam, expected):
    assert delta_cr_constant(lam, 1) == pytest.approx(expected, abs=5e-5)


@pytest.mark.parametrize("lam", [1.0, 2.0])
def test_delta_cr_constant_requires_lambda_above_two_mu(lam):
    with pytest.raises(NoOscillatoryRegimeError):
        delta_cr_constant(lam, 1)


def test_delta_cr_constant_scales_inversely_with_rates(rng):
    base = delta_cr_constant(3, 1)
    for c in rng.uniform(0.05, 20.0, size=50):
        assert delta_cr_constant(3 * c, c) == pytest.approx(base / c, rel=1e-12)


@pytest.mark.parametrize("lam, expected", [(3, 1.9682), (10, 0.3413)])
def test_delta_mod_constant(lam, expected):
    assert delta_mod_constant(lam, 1, 1, 0.2) == pytest.approx(expected, abs=1e-4)


def test_unforced_threshold_is_critical_delay():
    assert delta_mod_constant(3, 1, 0.0, 0.2) == delta_cr_constant(3, 1)
    assert delta1_threshold_constant(3, 1, 0.0) == 0.0


def test_delta1_threshold_constant():
    assert delta1_threshold_constant(3, 1, 1) == pytest.approx(-1 / math.sqrt(5), rel=1e-14)


@pytest.mark.parametrize("lam", [3.0, 10.0])
def test_slow_flow_changes_stability_at_threshold(lam):
    threshold = delta1_threshold_constant(lam, 1, 1)
    below = slow_flow_constant(lam, 1, 1, threshold - 1e-6)
    above = slow_flow_constant(lam, 1, 1, threshold + 1e-6)
    assert below.max_real_part() < 0
    assert above.max_real_part() > 0
    assert abs(routh_hurwitz(slow_flow_constant(lam, 1, 1, threshold)).a0) < 1e-9


@pytest.mark.parametrize("lam", [3.0, 10.0])
def test_slow_flow_eigenvalue_crosses_zero_at_threshold(lam):
    threshold = delta1_threshold_constant(lam, 1, 1)
    root = bisect(lambda d1: slow_flow_constant(lam, 1, 1, d1).max_real_part(), 1.5 * threshold, 0.5 * threshold,
                  xtol=1e-13, maxiter=200)
    assert abs(root - threshold) < 1e-9


def test_slow_flow_constant_stable_far_below_threshold():
    coefficients = routh_hurwitz(slow_flow_constant(3, 1, 1, -1))
    assert coefficients.a0 > 0
    assert coefficients.a1 > 0
    assert coefficients.stable


@pytest.mark.parametrize("delta1", [-1.0, -0.3, 0.0, 0.25, 2.0])
def test_closed_form_matches_slow_flow_constant(delta1):
    direct = routh_hurwitz(slow_flow_constant(3, 1, 1, delta1))
    closed = closed_form_coefficients_constant(3, 1, 1, delta1)
    assert closed.a0 == pytest.approx(direct.a0, rel=1e-9, abs=1e-14)
    assert closed.a1 == pytest.approx(direct.a1, rel=1e-9, abs=1e-14)


def test_unforced_slow_flow_trace():
    # without forcing only the detuning term survives in the trace
    lam, mu, delta1 = 3.0, 1.0, 0.7
    w = omega_cr_constant(lam, mu)
    d = delta_cr_constant(lam, mu)
    expected = 2 * delta1 * w ** 2 / (d ** 2 * w ** 2 + (d * mu + 1) ** 2)
    assert routh_hurwitz(slow_flow_constant(lam, mu, 0.0, delta1)).a1 == pytest.approx(-expected, rel=1e-12)
    assert np.trace(slow_flow_constant(lam, mu, 0.0, delta1).k) == pytest.approx(expected, rel=1e-12)


def test_routh_hurwitz_matches_eigenvalues(rng):
    checked = 0
    for entries in rng.normal(size=(10_000, 4)):
        k = SlowFlowMatrix.from_entries(*entries)
        real = k.max_real_part()
        if abs(real) < 1e-9:
            continue
        assert routh_hurwitz(k).stable == (real < 0)
        checked += 1
    assert checked > 9_900


def test_routh_hurwitz_signs():
    assert RouthHurwitz(a0=1.0, a1=-2.0).signs() == "a0:+ a1:-"
    assert not RouthHurwitz(a0=1.0, a1=-2.0).stable


def test_slow_flow_matrix_validates_shape():
    with pytest.raises(ValueError):
        SlowFlowMatrix(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        SlowFlowMatrix.from_entries(1.0, math.nan, 0.0, 0.0)


# --- moving average ------------------------------------------------------------


def test_delta_cr_ma():
    d = delta_cr_ma(10, 1)
    assert d == pytest.approx(2.1448, abs=5e-4)
    assert abs(sin_residual_ma(10, 1, d)) < 1e-8
    assert abs(cos_residual_ma(10, 1, d)) < 1e-8
    assert abs(combined_residual_ma(10, 1, d)) < 1e-12
    assert abs(characteristic_residual_ma(10, 1, d)) < 1e-8


def test_delta_cr_ma_is_first_root():
    d = delta_cr_ma(10, 1)
    grid = np.arange(1e-4, d - 0.01, 1e-4)
    residuals = np.array([[sin_residual_ma(10, 1, x), cos_residual_ma(10, 1, x)] for x in grid])
    both_small = (np.abs(residuals[:, 0]) < 1e-3) & (np.abs(residuals[:, 1]) < 1e-3)
    assert not both_small.any()


def test_omega_ma_at_critical_delay():
    assert omega_ma(10, 1, 2.1448) == pytest.approx(1.91376, abs=5e-5)
    assert omega_ma(10, 1, delta_cr_ma(10, 1)) == pytest.approx(math.sqrt(10 / delta_cr_ma(10, 1) - 1))


@pytest.mark.parametrize("delta", [10.0, 12.0])
def test_omega_ma_outside_oscillatory_regime(delta):
    with pytest.raises(NoOscillatoryRegimeError):
        omega_ma(10, 1, delta)


def test_omega_ma_rejects_nonpositive_delay():
    with pytest.raises(ConfigError):
        omega_ma(10, 1, 0.0)


def test_threshold_magnitude_ma():
    d = delta_cr_ma(10, 1)
    assert threshold_magnitude_ma(10, 1, 1, d) == pytest.approx(0.3677, abs=5e-4)


def test_theorem_sign_ma():
    assert theorem_sign_ma(10, 1, delta_cr_ma(10, 1)) == -1
    assert theorem_sign_ma(10, 1, 4.5) == 1


def test_closed_form_matches_slow_flow_ma():
    d = delta_cr_ma(10, 1)
    for delta1 in (-0.6, -0.2, 0.0, 0.3, 0.9):
        direct = routh_hurwitz(slow_flow_ma(10, 1, 1, delta1, delta_cr=d))
        closed = closed_form_coefficients_ma(10, 1, 1, delta1, delta_cr=d)
        assert closed.a0 == pytest.approx(direct.a0, rel=1e-8, abs=1e-13)
        assert closed.a1 == pytest.approx(direct.a1, rel=1e-8, abs=1e-13)


@pytest.mark.parametrize("rule, expected", [
    (SignRule.ROUTH_HURWITZ, 2.0713),
    (SignRule.THEOREM, 2.0713),
])
def test_delta_mod_ma(rule, expected):
    assert delta_mod_ma(10, 1, 1, 0.2, rule=rule) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("sign, expected", [(1, 2.2183), (-1, 2.0713)])
def test_delta_mod_ma_measured_sign(sign, expected):
    assert delta_mod_ma(10, 1, 1, 0.2, rule=SignRule.INTEGRATION, sign=sign) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("sign", [None, 0, 2])
def test_integration_rule_needs_measured_sign(sign):
    with pytest.raises(ConfigError):
        delta1_threshold_ma(10, 1, 1, rule=SignRule.INTEGRATION, sign=sign)



def test_delta1_threshold_ma_unforced():
    assert delta1_threshold_ma(10, 1, 0.0) == 0.0
    assert delta_mod_ma(10, 1, 0.0, 0.2) == delta_cr_ma(10, 1)


def test_moving_average_slow_flow_stable_side():
    d = delta_cr_ma(10, 1)
    magnitude = threshold_magnitude_ma(10, 1, 1, d)
    assert routh_hurwitz(slow_flow_ma(10, 1, 1, -1.5 * magnitude, delta_cr=d)).stable
    assert not routh_hurwitz(slow_flow_ma(10, 1, 1, 1.5 * magnitude, delta_cr=d)).stable


# --- reports -------------------------------------------------------------------


def test_is_resonant():
    assert is_resonant(math.sqrt(5), math.sqrt(5) / 2)
    assert not is_resonant(1.0, math.sqrt(5) / 2)
    assert is_resonant(1.0001, 0.5, tolerance=1e-3)


def test_report_constant_delay(fig5_params):
    report = stability_report(ModelKind.CONSTANT_DELAY, fig5_params)
    assert report.resonant
    assert report.omega_cr == pytest.approx(math.sqrt(5) / 2)
    assert report.gamma_resonant == pytest.approx(math.sqrt(5))
    assert report.delta_cr == pytest.approx(2.0577, abs=5e-5)
    assert report.delta_mod == pytest.approx(1.9682, abs=1e-4)
    assert report.predicted_stable
    assert report.coefficients.stable
    assert report.detuning == pytest.approx((1.947 - report.delta_cr) / 0.2)


def test_report_constant_delay_unstable_side(fig5_params):
    report = stability_report(ModelKind.CONSTANT_DELAY, fig5_params.with_delay(1.977))
    assert not report.predicted_stable
    assert not report.coefficients.stable


def test_report_non_resonant_forcing_keeps_critical_delay():
    p = ModelParams(lam=3, mu=1, alpha=1, epsilon=0.2, gamma=1.0, delta=2.0)
    report = stability_report(ModelKind.CONSTANT_DELAY, p)
    assert not report.resonant
    assert report.delta_mod == report.delta_cr


def test_report_moving_average(fig10_params):
    report = stability_report(ModelKind.MOVING_AVERAGE, fig10_params, assume_resonant=True)
    assert report.delta_cr == pytest.approx(2.1448, abs=5e-4)
    assert report.delta_mod == pytest.approx(2.0713, abs=1e-3)
    assert report.delta_mod_routh_hurwitz == report.delta_mod
    assert report.delta_mod_theorem == pytest.approx(2.0713, abs=1e-3)
    assert report.sign_rule is SignRule.ROUTH_HURWITZ
    assert report.integration_sign is None
    assert not report.sign_conflict
    assert not report.predicted_stable


def test_report_moving_average_measured_sign(fig10_params):
    report = stability_report(ModelKind.MOVING_AVERAGE, fig10_params, assume_resonant=True,
                              rule=SignRule.INTEGRATION, integration_sign=1)
    assert report.delta_mod == pytest.approx(2.2183, abs=1e-3)
    assert report.delta_mod_routh_hurwitz == pytest.approx(2.0713, abs=1e-3)
    assert report.integration_sign == 1
    assert report.sign_conflict
    assert report.predicted_stable


def test_report_integration_rule_without_sign(fig10_params):
    with pytest.raises(ConfigError):
        stability_report(ModelKind.MOVING_AVERAGE, fig10_params, assume_resonant=True, rule=SignRule.INTEGRATION)



def test_report_moving_average_off_resonance(fig10_params):
    report = stability_report(ModelKind.MOVING_AVERAGE, fig10_params)
    assert not report.resonant
    assert report.delta_mod == report.delta_cr
    assert not report.sign_conflict


def test_report_matches_direct_threshold(fig10_params):
    report = stability_report(ModelKind.MOVING_AVERAGE, fig10_params, assume_resonant=True)
    assert report.delta_mod == delta_mod_ma(10, 1, 1, 0.2)


def test_report_without_oscillatory_regime():
    with pytest.raises(NoOscillatoryRegimeError):
        stability_report(ModelKind.CONSTANT_DELAY, ModelParams(lam=1.5, mu=1, delta=1.0))
