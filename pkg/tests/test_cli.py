import json

import pytest

from scripts import queue_lab
from services.errors import NumericalFailureError


def run(capsys, *argv):
    code = queue_lab.main(list(argv))
    return code, capsys.readouterr()


def test_analyze_constant_delay(capsys):
    code, out = run(capsys, "analyze", "--lam", "3", "--mu", "1", "--alpha", "1", "--epsilon", "0.2",
                    "--gamma", "2.2360679774997896", "--delta", "1.947")
    assert code == 0
    report = json.loads(out.out)
    assert report["kind"] == "constant_delay"
    assert report["resonant"] is True
    assert report["delta_cr"] == pytest.approx(2.0577, abs=5e-5)
    assert report["delta_mod"] == pytest.approx(1.9682, abs=1e-4)


@pytest.mark.slow
def test_analyze_fixture(capsys):
    code, out = run(capsys, "analyze", "fig10")
    assert code == 0
    report = json.loads(out.out)
    assert report["sign_rule"] == "integration"
    assert report["integration_sign"] == 1
    assert report["delta_mod"] == pytest.approx(2.2183, abs=1e-3)
    assert report["delta_mod_theorem"] == pytest.approx(2.0713, abs=1e-3)
    assert report["sign_conflict"] is True


def test_analyze_sign_rule_override(capsys):
    code, out = run(capsys, "analyze", "fig10", "--sign-rule", "routh_hurwitz")
    assert code == 0
    report = json.loads(out.out)
    assert report["delta_mod"] == pytest.approx(2.0713, abs=1e-3)
    assert report["integration_sign"] is None


def test_analyze_integration_rule_needs_history(capsys):
    code, _ = run(capsys, "analyze", "--kind", "moving_average", "--lam", "10", "--mu", "1", "--alpha", "1",
                  "--epsilon", "0.2", "--assume-resonant", "--sign-rule", "integration")
    assert code == 2


def test_analyze_flags_default_to_routh_hurwitz(capsys):
    code, out = run(capsys, "analyze", "--kind", "moving_average", "--lam", "10", "--mu", "1", "--alpha", "1",
                    "--epsilon", "0.2", "--assume-resonant")
    assert code == 0
    report = json.loads(out.out)
    assert report["sign_rule"] == "routh_hurwitz"
    assert report["delta_mod"] == pytest.approx(2.0713, abs=1e-3)


def test_analyze_without_oscillation(capsys):
    code, _ = run(capsys, "analyze", "--lam", "1", "--mu", "1")
    assert code == 2


def test_analyze_needs_rates(capsys):
    code, _ = run(capsys, "analyze")
    assert code == 2


def test_analyze_invalid_parameters(capsys):
    code, _ = run(capsys, "analyze", "--lam", "3", "--mu", "1", "--alpha", "2")
    assert code == 2


def test_simulate_missing_config(capsys, tmp_path):
    code, _ = run(capsys, "simulate", str(tmp_path / "missing.env"))
    assert code == 2


def test_simulate_numerical_failure(capsys, monkeypatch):
    def blow_up(cfg, output_dir=None):
        raise NumericalFailureError("non-finite state", time=1.0)

    monkeypatch.setattr(queue_lab, "run_scenario", blow_up)
    code, _ = run(capsys, "simulate", "fig5")
    assert code == 3


def test_scan_rejects_bad_grid(capsys):
    code, _ = run(capsys, "scan", "fig5", "--lo", "1.9", "--hi", "2.0", "--grid", "1.9,abc")
    assert code == 2


def test_scan_inverted_bracket(capsys):
    code, _ = run(capsys, "scan", "fig5", "--lo", "2.0", "--hi", "1.9")
    assert code == 4


def test_unknown_sign_rule_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        queue_lab.main(["analyze", "fig10", "--sign-rule", "coin_flip"])
    assert excinfo.value.code == 2


def test_logs_stay_off_stdout(capsys):
    code, out = run(capsys, "--verbose", "analyze", "--lam", "10", "--mu", "1")
    assert code == 0
    json.loads(out.out)


@pytest.mark.slow
def test_simulate_writes_outputs(capsys, tmp_path):
    code, out = run(capsys, "simulate", "fig5", "--output-dir", str(tmp_path))
    assert code == 0
    summary = json.loads(out.out)
    assert summary["verdict"] == "Converging"
    assert (tmp_path / "fig5.csv").exists()
    assert (tmp_path / "fig5.json").exists()


@pytest.mark.slow
def test_simulate_is_deterministic(capsys, tmp_path):
    run(capsys, "simulate", "fig7", "--output-dir", str(tmp_path / "a"))
    run(capsys, "simulate", "fig7", "--output-dir", str(tmp_path / "b"))
    for name in ("fig7.csv", "fig7.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.slow
def test_scan_bracket_error(capsys):
    code, _ = run(capsys, "scan", "fig5", "--lo", "1.5", "--hi", "1.6")
    assert code == 4


@pytest.mark.slow
def test_check_passes(capsys):
    code, out = run(capsys, "check", "fig5", "--samples", "10000")
    assert code == 0
    assert "PASS  choice_fraction_sum" in out.out
    assert "FAIL" not in out.out
