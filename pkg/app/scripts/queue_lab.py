"""
Command-line front end for the delayed-information queue models.

Usage:
    queue-lab analyze --kind constant_delay --lam 3 --mu 1 --alpha 1 --epsilon 0.2 --gamma 2.2360679774997896
    queue-lab analyze fig10
    queue-lab simulate fig5 --output-dir output
    queue-lab scan fig5 --lo 1.90 --hi 2.05
    queue-lab scan fig7 --lo 0.30 --hi 0.38 --grid 0.32,0.34,0.36
    queue-lab check fig10

Exit codes: 0 success, 1 I/O failure, 2 invalid config, 3 numerical failure, 4 bracket error.
"""

import argparse
import json
import sys

from pydantic import ValidationError

from configs.config import get_settings
from configs.logger import get_logger, set_level
from configs.scenario import ScenarioConfig, load_scenario
from services.errors import (
    BracketError,
    ConfigError,
    NoOscillatoryRegimeError,
    NumericalFailureError,
    SignAmbiguityError,
)
from services.experiment_service import (
    check_invariants,
    classify_grid,
    empirical_threshold_scan,
    monotonicity_violations,
    run_scenario,
    scenario_report,
)
from services.model_service import ModelKind
from services.stability_service import SignRule

logger = get_logger("cli")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_BRACKET = 4


def print_json(document: dict) -> None:
    print(json.dumps(document, indent=2))


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.scenario:
        cfg = load_scenario(args.scenario)
        updates: dict[str, object] = {}
        if args.assume_resonant:
            updates["assume_resonant"] = True
        if args.sign_rule:
            updates["sign_rule"] = SignRule(args.sign_rule)
        cfg = cfg.model_copy(update=updates)
    else:
        if args.lam is None or args.mu is None:
            raise ConfigError("analyze needs a scenario or both --lam and --mu")
        rule = SignRule(args.sign_rule or SignRule.ROUTH_HURWITZ.value)
        if rule is SignRule.INTEGRATION and args.history is None:
            raise ConfigError("the integration sign rule needs --history Q1 Q2 or a scenario")
        q1, q2 = args.history or (0.0, 0.0)
        cfg = ScenarioConfig(name="analyze", kind=args.kind, lam=args.lam, mu=args.mu, alpha=args.alpha,
                             epsilon=args.epsilon, gamma=args.gamma, delta=args.delta,
                             history_q1=q1, history_q2=q2, assume_resonant=args.assume_resonant, sign_rule=rule)

    report = scenario_report(cfg)
    print_json(report.model_dump(mode="json"))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario)
    result = run_scenario(cfg, output_dir=args.output_dir)
    print_json({
        "scenario": cfg.name,
        "verdict": result.classification.verdict.value,
        "envelope_ratio": result.classification.envelope_ratio,
        "delta_mod": result.report.delta_mod if result.report else None,
        "csv": str(result.csv_path),
        "report": str(result.report_path),
    })
    return EXIT_OK


def parse_grid(raw: str | None) -> list[float]:
    if not raw:
        return []
    try:
        return sorted(float(x) for x in raw.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"--grid expects comma-separated delays, got {raw!r}") from e


def cmd_scan(args: argparse.Namespace) -> int:
    cfg: ScenarioConfig = load_scenario(args.scenario)
    document: dict = {"scenario": cfg.name}

    grid = parse_grid(args.grid)
    if grid:
        verdicts = classify_grid(cfg.kind, cfg.params, cfg.history, grid,
                                 workers=args.workers, steps_per_delay=cfg.steps_per_delay)
        document["grid"] = {f"{d:.6g}": c.verdict.value for d, c in verdicts.items()}
        document["grid_monotonicity_violations"] = monotonicity_violations(verdicts)

    scan = empirical_threshold_scan(cfg.kind, cfg.params, cfg.history, (args.lo, args.hi),
                                    tolerance=args.tolerance, steps_per_delay=cfg.steps_per_delay)
    document.update({
        "threshold": scan.threshold,
        "bracket": list(scan.bracket),
        "probes": {f"{d:.6g}": c.verdict.value for d, c in sorted(scan.probes.items())},
        "monotonicity_violations": monotonicity_violations(scan.probes),
    })
    print_json(document)
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario)
    results = check_invariants(cfg, samples=args.samples)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} invariant check(s) failed: {', '.join(failed)}")
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="queue-lab",
        description="Stability analysis and simulation of two-queue fluid models with delayed information",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    queue-lab analyze --lam 10 --mu 1 --alpha 1 --epsilon 0.2 --gamma 9.797958971132712
    queue-lab simulate fig8
    queue-lab scan fig5 --lo 1.90 --hi 2.05
    queue-lab check fig11
        """
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="Print the stability report as JSON")
    analyze.add_argument("scenario", nargs="?", help="Scenario file or fixture name (fig5 ... fig11)")
    analyze.add_argument("--kind", default=ModelKind.CONSTANT_DELAY.value,
                         help="constant_delay or moving_average")
    analyze.add_argument("--lam", type=float, help="Base arrival rate")
    analyze.add_argument("--mu", type=float, help="Per-customer service rate")
    analyze.add_argument("--alpha", type=float, default=0.0, help="Relative forcing amplitude")
    analyze.add_argument("--epsilon", type=float, default=0.0, help="Small parameter")
    analyze.add_argument("--gamma", type=float, default=0.0, help="Forcing frequency")
    analyze.add_argument("--delta", type=float, default=1.0, help="Delay at which to report slow-flow coefficients")
    analyze.add_argument("--assume-resonant", action="store_true",
                         help="Evaluate the resonant theory even if gamma != 2 omega_cr")
    analyze.add_argument("--sign-rule", choices=[r.value for r in SignRule],
                         help="Sign rule for the moving-average detuning threshold (default routh_hurwitz "
                              "without a scenario)")
    analyze.add_argument("--history", type=float, nargs=2, metavar=("Q1", "Q2"),
                         help="Constant initial queue lengths for the integration sign rule")
    analyze.set_defaults(handler=cmd_analyze)

    simulate = sub.add_parser("simulate", help="Integrate a scenario and write CSV + JSON")
    simulate.add_argument("scenario", help="Scenario file or fixture name")
    simulate.add_argument("--output-dir", help="Directory for files without explicit paths")
    simulate.set_defaults(handler=cmd_simulate)

    scan = sub.add_parser("scan", help="Bisect on the delay for the empirical Hopf threshold")
    scan.add_argument("scenario", help="Scenario file or fixture name (its delta is ignored)")
    scan.add_argument("--lo", type=float, required=True, help="Delay classified Converging")
    scan.add_argument("--hi", type=float, required=True, help="Delay classified Oscillating")
    scan.add_argument("--tolerance", type=float, help="Final bracket width (default from settings)")
    scan.add_argument("--grid", help="Comma-separated delays to classify before bisecting")
    scan.add_argument("--workers", type=int, help="Worker processes for the grid pre-scan")
    scan.set_defaults(handler=cmd_scan)

    check = sub.add_parser("check", help="Run the invariant suite on a scenario")
    check.add_argument("scenario", help="Scenario file or fixture name")
    check.add_argument("--samples", type=int, default=100_000, help="Random pairs for the choice-fraction check")
    check.set_defaults(handler=cmd_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        set_level("DEBUG" if args.verbose else get_settings().log_level)
        return args.handler(args)
    except (ConfigError, ValidationError, NoOscillatoryRegimeError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except (NumericalFailureError, SignAmbiguityError) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except BracketError as e:
        logger.error(f"Bracket error: {e}")
        return EXIT_BRACKET
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
