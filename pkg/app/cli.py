"""Command line entry point: ``python -m app.cli {generate,run,sweep,verify}``."""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.core.config import settings
from app.core.errors import EngineError, IngestionError, NumericError, UsageError
from app.engine.datasets import export_series, generate

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_INGESTION = 4


def exit_code(exc: EngineError) -> int:
    if isinstance(exc, IngestionError):
        return EXIT_INGESTION
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_USAGE


def _with_overrides(args):
    from app.api.v1.experiments.utils import apply_overrides, load_config

    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    if args.format is not None:
        overrides["output.format"] = args.format
    return apply_overrides(config, overrides) if overrides else config


def cmd_generate(args) -> int:
    out = Path(args.out or settings.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    names = ("lorenz", "rlc") if args.dataset == "all" else (args.dataset,)
    fmt = args.format or "csv"
    for name in names:
        series = generate(name, args.n_samples, args.integrator)
        path = out / f"{name}.{fmt}"
        export_series(series, path, "\t" if fmt == "tsv" else ",")
        print(f"{name}: {len(series)} samples -> {path}")
    return 0


def cmd_run(args) -> int:
    from app.api.v1.experiments.services import run_experiment

    config = _with_overrides(args)
    report = run_experiment(config, out=args.out, write_files=True)
    print(f"{'depth':>5}  {'MAE':>12}  {'MSE':>12}")
    for m in report.depths:
        marker = " *" if m.depth == report.best_depth else ""
        print(f"{m.depth:>5}  {m.mae:12.6g}  {m.mse:12.6g}{marker}")
    print(f"monitored  MAE {report.monitored.mae:.6g}  MSE {report.monitored.mse:.6g}")
    print(f"results in {report.output_directory} ({report.wall_time:.1f}s)")
    return 0


def cmd_sweep(args) -> int:
    from app.api.v1.experiments.services import sweep
    from app.api.v1.experiments.utils import parse_grid

    config = _with_overrides(args)
    frame = sweep(config, parse_grid(args.grid), out=args.out, workers=args.workers)
    print(frame.to_string(index=False))
    return 0 if (frame["status"] == "ok").all() else EXIT_NUMERIC


def cmd_verify(args) -> int:
    from app.api.v1.experiments.verification import format_table, run_checks

    results = run_checks(quick=args.quick, sunspot=args.sunspot)
    print(format_table(results))
    return 0 if all(r.passed is not False for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernel-cascade", description=settings.PROJECT_NAME)
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    verbs = parser.add_subparsers(dest="verb", required=True)

    gen = verbs.add_parser("generate", help="write the benchmark series to CSV")
    gen.add_argument("--dataset", choices=("lorenz", "rlc", "all"), default="all")
    gen.add_argument("--n-samples", type=int, default=None)
    gen.add_argument("--integrator", choices=("rk4", "euler"), default="rk4")
    gen.add_argument("--out", default=None)
    gen.add_argument("--format", choices=("csv", "tsv"), default=None)
    gen.set_defaults(handler=cmd_generate)

    for name, handler, text in (
        ("run", cmd_run, "run one experiment"),
        ("sweep", cmd_sweep, "run a grid of experiments"),
    ):
        sub = verbs.add_parser(name, help=text)
        sub.add_argument("--config", required=True)
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--out", default=None)
        sub.add_argument("--format", choices=("csv", "tsv"), default=None)
        sub.set_defaults(handler=handler)
        if name == "sweep":
            sub.add_argument("--grid", action="append", required=True, metavar="SECTION.KEY=V1,V2")
            sub.add_argument("--workers", type=int, default=None)

    ver = verbs.add_parser("verify", help="run the built-in acceptance checks")
    ver.add_argument("--quick", action="store_true", help="skip the long trend and precision checks")
    ver.add_argument("--sunspot", default=None, help="sunspot CSV for the linear-RLS stage check")
    ver.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except EngineError as exc:
        where = f" (step {exc.step})" if exc.step is not None else ""
        hint = f" {exc.resolution}" if exc.resolution else ""
        print(f"error [{exc.error_code}]{where}: {exc.message}.{hint}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
