"""Command-line interface: ``price``, ``bench`` and ``verify``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 failed property check.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import TABLES, WORKERS_ENV, bench_cells, filter_cells, run_bench
from .config import OUTPUT_FORMATS, ConfigError, load_config
from .engine import RegressionFailure
from .lattice import LatticeError
from .quadrature import QuadratureError
from .report import format_reports, run_cell
from .verification import run_suite

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_VALIDATION", "EXIT_NUMERICAL", "EXIT_PROPERTY"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_PROPERTY = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualbermudan",
        description="Bermudan option bounds from regression-fitted dual martingales.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    price = sub.add_parser("price", help="price one configured option")
    price.add_argument("--config", required=True, help="INI-style or JSON configuration file")
    price.add_argument("--seed", type=int, help="override [sampling] seed")
    price.add_argument("--out", help="write the report here instead of stdout")
    price.add_argument("--format", choices=OUTPUT_FORMATS, help="override [output] format")

    bench = sub.add_parser("bench", help="reproduce a benchmark table")
    bench.add_argument("--table", required=True, choices=TABLES)
    bench.add_argument("--cells", help="comma-separated key=value filter, e.g. 'J=3' or 'D=5,x0=100'")
    bench.add_argument("--paths-scale", type=float, default=1.0, help="scale the lower/upper path counts")
    bench.add_argument("--seed", type=int, default=2024)
    bench.add_argument("--out", help="write the combined report here")
    bench.add_argument("--format", choices=OUTPUT_FORMATS, default="table")
    bench.add_argument("--workers", type=int, help=f"parallel cells (default: ${WORKERS_ENV} or 1)")

    verify = sub.add_parser("verify", help="exact duality checks on finite trees")
    verify.add_argument("--fixtures", help="comma-separated fixture names or lattice files")
    verify.add_argument("--fault-inject", action="store_true", help="perturb the Doob martingale; checks must fail")
    return parser


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_price(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    fmt = args.format or config.output.format
    report = run_cell(config, 0, Path(args.config).stem)
    _emit(format_reports([report], fmt), args.out or config.output.path or None)
    return EXIT_OK


def _cmd_bench(args) -> int:
    cells = filter_cells(bench_cells(args.table, seed=args.seed, paths_scale=args.paths_scale), args.cells)
    if not cells:
        raise ValueError(f"no cells match filter {args.cells!r}")
    reports = run_bench(cells, args.workers)
    _emit(format_reports(reports, args.format), args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    fixtures = args.fixtures.split(",") if args.fixtures else None
    results = run_suite(fixtures, fault=args.fault_inject)
    for res in results:
        print(res.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_PROPERTY


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"price": _cmd_price, "bench": _cmd_bench, "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except (RegressionFailure, QuadratureError, FloatingPointError, ArithmeticError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, LatticeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
