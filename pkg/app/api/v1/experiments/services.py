import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import mean_absolute_error, mean_squared_error

from app.core.config import settings
from app.core.errors import EngineError, UsageError
from app.engine.datasets import Series, generate, load_sunspot, make_supervised, split_pairs
from app.engine.topology import export_error_channels, export_part_channels, run_online, train_construct

from .schemas import DatasetSection, DepthMetrics, DepthTrace, ExperimentConfig, MetricsReport, PrecisionSummary
from .utils import (
    SEPARATORS,
    apply_overrides,
    build_topology,
    output_directory,
    series_spec,
    table_path,
    write_report,
    write_summary,
    write_traces,
)

logger = logging.getLogger(__name__)


def compute_metrics(errors: Sequence[float]) -> Tuple[float, float]:
    """Mean absolute and mean squared error of one error vector."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise UsageError("cannot compute metrics of an empty error vector")
    if not np.all(np.isfinite(e)):
        # sklearn rejects non-finite input; a diverged depth reports inf or nan
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.mean(np.abs(e))), float(np.mean(e * e))
    zeros = np.zeros_like(e)
    return float(mean_absolute_error(zeros, e)), float(mean_squared_error(zeros, e))


def depth_metrics(errors_per_depth: Sequence[Sequence[float]]) -> List[DepthMetrics]:
    metrics = []
    for depth, errors in enumerate(errors_per_depth, start=1):
        mae, mse = compute_metrics(errors)
        metrics.append(DepthMetrics(depth=depth, mae=mae, mse=mse))
    return metrics


def best_depth(metrics: Sequence[DepthMetrics]) -> int:
    scores = [m.mse if math.isfinite(m.mse) else math.inf for m in metrics]
    return int(np.argmin(scores)) + 1


def load_series(dataset: DatasetSection) -> Series:
    if dataset.name == "sunspot":
        return load_sunspot(dataset.path)
    return generate(dataset.name, dataset.n_samples, dataset.integrator)


def run_experiment(
    config: ExperimentConfig,
    out: Optional[str] = None,
    write_files: Optional[bool] = None,
    include_traces: bool = False,
) -> MetricsReport:
    """Split, train, run the test span prequentially and report per depth.

    Files (report, traces, channels, parts, summary) are written under
    ``<out>/<experiment name>`` when ``write_files`` (default: the config's
    ``output.write_files``) is set.
    """
    started = time.perf_counter()
    series = load_series(config.dataset)
    spec = series_spec(config.dataset)
    train, _, test = split_pairs(make_supervised(series, spec.inputs), spec)
    topology = build_topology(config, train[0].x.size)
    logger.info(
        "experiment '%s': %s, %d training and %d test pairs, depth %d",
        config.experiment.name, series.name, len(train), len(test), topology.depth,
    )

    graph = train_construct(topology, [(p.x, p.y) for p in train], validation=spec.validation)
    records = run_online(graph, [(p.x, p.y) for p in test], start_index=spec.test[0])
    if not records:
        raise UsageError("every test sample was skipped")

    targets = {spec.test[0] + offset: pair.y for offset, pair in enumerate(test)}
    errors = np.array([record.errors for record in records])
    predictions = np.array([record.predictions for record in records])
    indices = [record.n for record in records]
    ys = [targets[n] for n in indices]

    metrics = depth_metrics(errors.T)
    mae, mse = compute_metrics([record.monitored_error for record in records])
    traces = [
        DepthTrace(depth=d, n=indices, y=ys, prediction=predictions[:, d - 1].tolist(), error=errors[:, d - 1].tolist())
        for d in range(1, errors.shape[1] + 1)
    ]
    wall_time = time.perf_counter() - started

    report = MetricsReport(
        name=config.experiment.name,
        dataset=series.name,
        seed=config.experiment.seed,
        depths=metrics,
        monitored=DepthMetrics(depth=0, mae=mae, mse=mse),
        best_depth=best_depth(metrics),
        dictionary_size=sum(group.size for group in graph.cascade[0].parallel),
        training_samples=len(train),
        test_samples=len(records),
        skipped_samples=len(test) - len(records),
        precision=[
            PrecisionSummary(
                incumbent_loss=r.incumbent_loss, best_loss=r.best_loss, accepted=r.accepted,
                selection_runs=r.selection_runs, generations=r.generations,
            )
            for r in graph.precision_report
        ],
        wall_time=wall_time,
        config=config.model_dump(mode="json"),
        traces=traces if include_traces else None,
    )

    if config.output.write_files if write_files is None else write_files:
        directory = output_directory(config, out)
        write_outputs(report, traces, graph, directory, config.output.format)
        report.output_directory = str(directory)

    logger.info(
        "experiment '%s' done in %.2fs: best depth %d (MSE %.6g), depth 1 MSE %.6g",
        config.experiment.name, wall_time, report.best_depth,
        metrics[report.best_depth - 1].mse, metrics[0].mse,
    )
    return report


def write_outputs(report: MetricsReport, traces: Sequence[DepthTrace], graph, directory: Path, fmt: str = "csv"):
    directory.mkdir(parents=True, exist_ok=True)
    write_report([(m.depth, m.mae, m.mse) for m in report.depths], directory, fmt)
    write_traces(traces, directory, fmt)
    export_error_channels(graph, table_path(directory, "channels", fmt), SEPARATORS[fmt])
    export_part_channels(graph, table_path(directory, "parts", fmt), SEPARATORS[fmt])
    write_summary(
        {
            "config": report.config,
            "wall_time": report.wall_time,
            "monitored": report.monitored.model_dump(),
            "depths": [m.model_dump() for m in report.depths],
            "best_depth": report.best_depth,
            "dictionary_size": report.dictionary_size,
            "skipped_samples": report.skipped_samples,
            "precision": [p.model_dump() for p in report.precision],
        },
        directory,
    )
    logger.info("wrote results to %s", directory)


# ------------------------------------------------------------------- sweep

def _sweep_run(run: int, overrides: Mapping[str, str], payload: dict, out: str) -> dict:
    row = {"run": run, "overrides": ";".join(f"{k}={v}" for k, v in overrides.items())}
    try:
        report = run_experiment(ExperimentConfig.model_validate(payload), out=out)
    except EngineError as exc:
        logger.warning("sweep run %d failed: %s", run, exc.message)
        return {**row, "best_depth": None, "best_mse": None, "status": exc.error_code}
    return {
        **row,
        "best_depth": report.best_depth,
        "best_mse": report.depths[report.best_depth - 1].mse,
        "status": "ok",
    }


def sweep(
    config: ExperimentConfig,
    grid: Mapping[str, Sequence[str]],
    out: Optional[str] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """Run the cartesian product of ``grid`` overrides and write ``sweep.csv``."""
    if not grid:
        raise UsageError("the sweep grid is empty", resolution="Pass --grid section.key=v1,v2")
    base = Path(out or config.output.directory or settings.OUTPUT_DIR) / config.experiment.name
    jobs = []
    for run, combo in enumerate(itertools.product(*grid.values())):
        overrides: Dict[str, str] = dict(zip(grid.keys(), combo))
        run_config = apply_overrides(config, {**overrides, "experiment.name": f"run{run:03d}"})
        jobs.append((run, overrides, run_config.model_dump(mode="json"), str(base)))

    workers = workers or settings.SWEEP_WORKERS
    logger.info("sweep over %d configurations with %d workers", len(jobs), workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_run, *zip(*jobs)))
    else:
        rows = [_sweep_run(*job) for job in jobs]

    base.mkdir(parents=True, exist_ok=True)
    fmt = config.output.format
    frame = pd.DataFrame(rows, columns=["run", "overrides", "best_depth", "best_mse", "status"])
    frame.to_csv(table_path(base, "sweep", fmt), sep=SEPARATORS[fmt], index=False, float_format="%.17g")
    return frame
