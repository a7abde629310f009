from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from . import __version__
from .config import (
    CliConfig,
    ConfigError,
    SampleConfig,
    build_cli_config,
    describe_validation_error,
    load_config_file,
)
from .harness import HarnessError, run_suite
from .icl_sim import run_linear_equivalence, run_softmax_comparison, trajectory_to_json
from .io_utils import write_text_atomic
from .numkit import NumkitError
from .plot import emit_plot, render_svg
from .report import ReportParseError, SuiteReport, records_to_csv
from .shift_analysis import PreconditionViolation, ShiftKind

logger = logging.getLogger(__name__)

FLAG_NAMES = {"beta_mode": "--beta", "seed": "--seed", "r": "--r"}

# Per-subcommand built-in defaults; everything else falls back to CliConfig.
SUBCOMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "verify-gradient": {"trials": 1000, "r": 2.0, "n_range": (2, 16)},
    "verify-facts": {},
    "verify-bounds": {},
    "verify-beta": {},
    "plot": {},
}
ICL_TRIALS = {"linear": 1000, "softmax": 100}

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


def _error(message: str) -> None:
    print(message, file=sys.stderr)


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _flag_values(args: argparse.Namespace) -> dict[str, Any]:
    keys = (
        "suite", "mode", "task", "trials", "seed", "r", "rho", "b_mode", "eta", "steps",
        "workers", "h", "beta_mode", "out", "format", "plot", "trajectory", "report",
    )
    values = {key: getattr(args, key, None) for key in keys}
    for key in ("n_range", "d_range"):
        value = getattr(args, key, None)
        values[key] = tuple(value) if value is not None else None
    return values


def _resolve_config(args: argparse.Namespace) -> CliConfig:
    subcommand = args.command
    flags = _flag_values(args)
    try:
        file_values = load_config_file(Path(args.config), subcommand) if args.config else {}
    except ConfigError as exc:
        _error(str(exc))
        raise SystemExit(EXIT_USAGE) from exc

    defaults = dict(SUBCOMMAND_DEFAULTS.get(subcommand, {}))
    if subcommand == "icl":
        task = flags.get("task") or file_values.get("task") or "linear"
        defaults["trials"] = ICL_TRIALS.get(str(task), ICL_TRIALS["linear"])
    try:
        return build_cli_config(
            subcommand=subcommand, defaults=defaults, file_values=file_values, flag_values=flags
        )
    except ValidationError as exc:
        for line in describe_validation_error(exc, FLAG_NAMES):
            _error(line)
        raise SystemExit(EXIT_USAGE) from exc


def _sample_config(cli: CliConfig, *, theorem_mode: bool) -> SampleConfig:
    kind = ShiftKind.WEIGHT if cli.mode == "x" else ShiftKind.DATA
    try:
        return cli.sample_config(theorem_mode=theorem_mode, shift_kind=kind)
    except ValidationError as exc:
        for line in describe_validation_error(exc, FLAG_NAMES):
            _error(line)
        raise SystemExit(EXIT_USAGE) from exc


def _emit(report: SuiteReport, cli: CliConfig) -> int:
    payload = records_to_csv(report.records) if cli.format == "csv" else report.to_json()
    if cli.out:
        write_text_atomic(Path(cli.out), payload)
        logger.info("wrote %s report to %s", cli.format, cli.out)
    else:
        sys.stdout.write(payload)
    if cli.plot:
        write_text_atomic(Path(cli.plot), render_svg(report))

    if report.summary.passed:
        return EXIT_OK
    summary = report.summary
    counts = ", ".join(f"{name}={summary.violations[name]}" for name in summary.failed)
    _error(f"{report.suite}: bound violations ({counts})")
    violation = report.first_violation()
    if violation is not None:
        _error(json.dumps(violation.to_dict(), indent=2, sort_keys=True))
    return EXIT_VIOLATION


def _run_suite(suite: str, config: SampleConfig) -> SuiteReport:
    try:
        return run_suite(suite, config)
    except (HarnessError, NumkitError, PreconditionViolation) as exc:
        _error(f"{suite}: {exc}")
        raise SystemExit(EXIT_USAGE) from exc


def cmd_verify_gradient(args: argparse.Namespace) -> int:
    cli = _resolve_config(args)
    return _emit(_run_suite("gradient", _sample_config(cli, theorem_mode=False)), cli)


def cmd_verify_facts(args: argparse.Namespace) -> int:
    cli = _resolve_config(args)
    return _emit(_run_suite("facts", _sample_config(cli, theorem_mode=False)), cli)


def cmd_verify_bounds(args: argparse.Namespace) -> int:
    cli = _resolve_config(args)
    theorem = cli.suite == "theorem"
    suite = f"{cli.suite}_{'x' if cli.mode == 'x' else 'A'}"
    return _emit(_run_suite(suite, _sample_config(cli, theorem_mode=theorem)), cli)


def cmd_verify_beta(args: argparse.Namespace) -> int:
    cli = _resolve_config(args)
    return _emit(_run_suite("beta", _sample_config(cli, theorem_mode=False)), cli)


def cmd_icl(args: argparse.Namespace) -> int:
    cli = _resolve_config(args)
    config = _sample_config(cli, theorem_mode=False)
    try:
        if cli.task == "linear":
            report = run_linear_equivalence(config, cli.eta)
        else:
            report, trajectory = run_softmax_comparison(config, cli.gd_config())
            if cli.trajectory:
                write_text_atomic(Path(cli.trajectory), trajectory_to_json(trajectory))
    except (HarnessError, NumkitError, PreconditionViolation) as exc:
        _error(f"icl: {exc}")
        return EXIT_USAGE
    return _emit(report, cli)


def cmd_plot(args: argparse.Namespace) -> int:
    cli = _resolve_config(args)
    if not cli.report or not cli.out:
        _error("plot requires --report and --out")
        return EXIT_USAGE
    try:
        emit_plot(Path(cli.report), Path(cli.out))
    except ReportParseError as exc:
        _error(str(exc))
        return EXIT_USAGE
    return EXIT_OK


def cmd_version(args: argparse.Namespace) -> int:
    print(__version__)
    return EXIT_OK


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML or JSON file with the same keys as the flags")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--r", type=float, help="radius R bounding ||A|| and ||x||_2")
    parser.add_argument("--rho", type=float, help="fraction of the 0.01 step cap")
    parser.add_argument("--n-range", type=int, nargs=2, metavar=("LOW", "HIGH"))
    parser.add_argument("--d-range", type=int, nargs=2, metavar=("LOW", "HIGH"))
    parser.add_argument("--b-mode", choices=["simplex", "box01", "gaussian"])
    parser.add_argument("--workers", type=int)
    parser.add_argument("--h", type=float, help="central-difference step")
    parser.add_argument("--out", help="report path (standard output when omitted)")
    parser.add_argument("--format", choices=["json", "csv"])
    parser.add_argument("--plot", help="also write an SVG scatter to this path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softshift")
    parser.add_argument("--version", action="version", version=f"softshift {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    subparsers = parser.add_subparsers(dest="command")

    gradient = subparsers.add_parser("verify-gradient")
    _add_run_options(gradient)
    gradient.set_defaults(func=cmd_verify_gradient)

    facts = subparsers.add_parser("verify-facts")
    _add_run_options(facts)
    facts.set_defaults(func=cmd_verify_facts)

    bounds = subparsers.add_parser("verify-bounds")
    _add_run_options(bounds)
    bounds.add_argument("--mode", choices=["x", "a"])
    bounds.add_argument("--suite", choices=["theorem", "lemmas"])
    bounds.add_argument("--beta", choices=["floor", "empirical"], dest="beta_mode")
    bounds.set_defaults(func=cmd_verify_bounds)

    beta = subparsers.add_parser("verify-beta")
    _add_run_options(beta)
    beta.add_argument("--mode", choices=["x", "a"])
    beta.set_defaults(func=cmd_verify_beta)

    icl = subparsers.add_parser("icl")
    _add_run_options(icl)
    icl.add_argument("--task", choices=["linear", "softmax"])
    icl.add_argument("--eta", type=float)
    icl.add_argument("--steps", type=int)
    icl.add_argument("--trajectory", help="write the first softmax trajectory as JSON")
    icl.set_defaults(func=cmd_icl)

    plot = subparsers.add_parser("plot")
    plot.add_argument("--config")
    plot.add_argument("--report", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot)

    version = subparsers.add_parser("version")
    version.set_defaults(func=cmd_version)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    _configure_logging(args.verbose)
    try:
        return int(args.func(args))
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
