"""
acvar command line.

    acvar <kind> --config PATH [--out PATH] [--format csv|human]
    acvar identities [--samples N] [--seed S]
    acvar spectrum --kind circle|sphere --radius R --max-mode K
    acvar oracle [--seed S]
    acvar serve [--host H] [--port P]

Exit codes: 0 all verdicts pass, 1 a verdict failed or the computation raised,
2 configuration error.
"""

import argparse
import logging
import sys

from . import __version__, settings
from .config import ExperimentKind, load_config
from .errors import ConfigurationError, LabError
from .sharp_interface import DEFAULT_MAX_MODE, jacobi_spectrum

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _add_output(parser: argparse.ArgumentParser):
    parser.add_argument("--out", help="write the report to this path instead of stdout")
    parser.add_argument("--format", choices=("csv", "human"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acvar", description="Allen-Cahn inner-variation laboratory")
    parser.add_argument("--version", action="version", version=f"acvar {__version__}")
    parser.add_argument("--log-level", default=None, help="override ACVAR_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in ExperimentKind:
        p = sub.add_parser(kind.value, help=f"ε-sweep for the {kind.value} limit")
        p.add_argument("--config", required=True, help="experiment TOML file")
        _add_output(p)

    p = sub.add_parser("identities", help="frame identity and expansion residual suites")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--expansions", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)

    p = sub.add_parser("spectrum", help="Jacobi spectrum on a circle or sphere")
    p.add_argument("--kind", choices=("circle", "sphere"), required=True)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--max-mode", type=int, default=DEFAULT_MAX_MODE)
    _add_output(p)

    p = sub.add_parser("oracle", help="finite-difference vs analytic inner variations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, nargs="+", default=[0.02, 0.01])
    _add_output(p)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default=settings.HOST)
    p.add_argument("--port", type=int, default=settings.PORT)
    return parser


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)


def _run(args) -> int:
    from . import lab

    if args.command == "identities":
        report = lab.run_identities(args.samples, args.expansions, args.seed)
        _emit(lab.emit_identities(report, args.format, args.out), args.out)
        return EXIT_PASS if report.passed else EXIT_FAIL

    if args.command == "spectrum":
        if args.max_mode < 2:
            raise ConfigurationError("--max-mode must be at least 2")
        if args.radius <= 0:
            raise ConfigurationError("--radius must be positive")
        report = jacobi_spectrum(args.kind, args.radius, args.max_mode)
        _emit(lab.emit_spectrum(report, args.format, args.out), args.out)
        return EXIT_PASS if report.max_closed_form_error < 1e-8 else EXIT_FAIL

    if args.command == "oracle":
        rows = lab.run_oracle(tuple(args.eps), args.seed)
        _emit(lab.emit_oracle(rows, args.format, args.out), args.out)
        return EXIT_PASS if all(r.passed for r in rows) else EXIT_FAIL

    config = load_config(args.config)
    table = lab.run_experiment(config, args.command)
    out = args.out or config.output
    _emit(lab.emit(table, args.format, out), out)
    return EXIT_PASS if table.verdict else EXIT_FAIL


def _serve(args) -> int:
    import uvicorn

    uvicorn.run("acvar.main:app", host=args.host, port=args.port, log_level=settings.LOG_LEVEL.lower())
    return EXIT_PASS


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings.configure_logging(args.log_level)
    if args.command == "serve":
        return _serve(args)
    try:
        return _run(args)
    except ConfigurationError as e:
        logger.error("configuration error: %s", e.message)
        return EXIT_CONFIG
    except LabError as e:
        logger.error("%s: %s", type(e).__name__, e.message)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
