import configparser
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigError
from app.engine.datasets import SERIES_SPECS, SeriesSpec
from app.engine.groups import GroupSettings
from app.engine.kernel_core import KernelConfig
from app.engine.precision import PrecisionOptions
from app.engine.topology import StageSpec, TopologySpec, parse_partition
from app.engine.utils import symmetrize

from .schemas import DatasetSection, DepthTrace, ExperimentConfig

logger = logging.getLogger(__name__)

SEPARATORS = {"csv": ",", "tsv": "\t"}
FLOAT_FORMAT = "%.17g"


# ------------------------------------------------------------------ config

def validate_config(data: Mapping) -> ExperimentConfig:
    """Validate a nested mapping, reporting the first offending field."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "config"
        raise ConfigError(field, error["msg"]) from exc


def read_ini(path) -> Dict[str, Dict[str, str]]:
    file = Path(path)
    if not file.is_file():
        raise ConfigError("config", f"file '{path}' not found")
    parser = configparser.ConfigParser(
        inline_comment_prefixes=(";", "#"), comment_prefixes=(";", "#"), interpolation=None
    )
    try:
        parser.read(file, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse '{path}': {exc}") from exc
    return {section: dict(parser.items(section)) for section in parser.sections()}


def load_config(path) -> ExperimentConfig:
    config = validate_config(read_ini(path))
    logger.info("loaded experiment '%s' from %s", config.experiment.name, path)
    return config


def apply_overrides(config: ExperimentConfig, overrides: Mapping[str, object]) -> ExperimentConfig:
    """``{"section.key": value}`` overrides, revalidated as a whole."""
    data = config.model_dump(mode="json")
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(dotted, "override keys take the form section.key")
        if section not in data:
            raise ConfigError(dotted, f"unknown section '{section}'")
        data[section][key] = value
    return validate_config(data)


def parse_grid(items: Sequence[str]) -> Dict[str, List[str]]:
    """``section.key=v1,v2`` items; ``;`` separates values that contain commas."""
    grid: Dict[str, List[str]] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError("grid", f"cannot parse '{item}'", resolution="Use section.key=v1,v2")
        splitter = ";" if ";" in raw else ","
        values = [value.strip() for value in raw.split(splitter) if value.strip()]
        if not values:
            raise ConfigError(key.strip(), "grid entry has no values")
        grid[key.strip()] = values
    return grid


def series_spec(dataset: DatasetSection) -> SeriesSpec:
    """Protocol split of the dataset with any bounds overridden by the config."""
    spec = SERIES_SPECS[dataset.name]
    validation = (
        spec.validation[0] if dataset.validation_start is None else dataset.validation_start,
        spec.validation[1] if dataset.validation_end is None else dataset.validation_end,
    )
    test = (
        spec.test[0] if dataset.test_start is None else dataset.test_start,
        spec.test[1] if dataset.test_end is None else dataset.test_end,
    )
    spec = replace(
        spec,
        n_samples=dataset.n_samples or spec.n_samples,
        train_end=dataset.train_end or spec.train_end,
        validation=validation,
        test=test,
    )
    if not 0 <= spec.validation[0] < spec.validation[1] <= spec.train_end:
        raise ConfigError("dataset.validation_end", "validation must be a non-empty slice of the training span")
    if not spec.train_end <= spec.test[0] < spec.test[1]:
        raise ConfigError("dataset.test_start", "test span must follow the training span")
    return spec


def kernel_from_config(config: ExperimentConfig, input_dim: int) -> KernelConfig:
    algorithm = config.algorithm
    value = algorithm.precision
    if isinstance(value, (int, float)):
        return KernelConfig.isotropic(input_dim, float(value), algorithm.h0)
    entries = np.asarray(value, dtype=float)
    if entries.size == input_dim:
        precision = np.diag(entries)
    elif entries.size == input_dim * input_dim:
        precision = symmetrize(entries.reshape(input_dim, input_dim))
    else:
        raise ConfigError(
            "algorithm.precision",
            f"expected a scale, {input_dim} diagonal entries or {input_dim * input_dim} matrix entries",
        )
    return KernelConfig(precision, algorithm.h0)


def _stage_specs(config: ExperimentConfig) -> tuple:
    topology = config.topology
    stages = []
    for kind in topology.stages:
        if kind == "last_error":
            stages.append(StageSpec())
        elif kind == "linear_rls":
            stages.append(StageSpec(kind, lags=topology.lags, beta2=topology.beta2))
        else:
            stages.append(StageSpec(
                kind,
                lags=topology.lags,
                group=GroupSettings(sparsifier="ald", updater="krls", nu1=topology.stage_nu1,
                                    regularizer=config.algorithm.regularizer),
                kernel=KernelConfig.isotropic(topology.lags, topology.stage_precision, topology.stage_h0),
            ))
    return tuple(stages)


def build_topology(config: ExperimentConfig, input_dim: int) -> TopologySpec:
    algorithm = config.algorithm
    partition = parse_partition(algorithm.partition)
    group = GroupSettings(
        sparsifier=algorithm.sparsifier,
        updater=algorithm.updater,
        nu1=algorithm.nu1,
        nu2=algorithm.nu2,
        nu3=algorithm.nu3,
        regularizer=algorithm.regularizer,
        beta=algorithm.beta,
        innovations=algorithm.innovations,
        learning_rate=algorithm.learning_rate,
        lambda_scale=algorithm.lambda_scale,
        feedback_lags=tuple(algorithm.feedback_lags),
        max_size=algorithm.max_size or (sum(partition) if partition else None),
        replace_when_full=algorithm.replace_when_full,
        ofs_candidates=algorithm.ofs_candidates,
        ofs_threshold=algorithm.ofs_threshold,
        delta=algorithm.delta,
    )
    precision = config.precision
    return TopologySpec(
        group=group,
        kernel=kernel_from_config(config, input_dim),
        partition=partition,
        depth=config.topology.depth,
        stages=_stage_specs(config),
        auto_depth=config.topology.auto_depth,
        monitor_window=config.topology.monitor_window,
        grow_online=config.topology.grow_online,
        precision_mode=precision.mode,
        precision_samples=precision.samples,
        precision_weighting=precision.weighting,
        precision_recency=precision.recency,
        precision=PrecisionOptions(
            generations=precision.generations,
            sigma0=precision.sigma0,
            sign=precision.sign,
            c0=precision.c0,
            seed=config.experiment.seed,
            workers=precision.workers,
            lambda_c=precision.population,
            form=precision.form,
        ),
    )


# ----------------------------------------------------------------- outputs

def output_directory(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    base = Path(out or config.output.directory or settings.OUTPUT_DIR)
    return base / config.experiment.name


def table_path(directory: Path, stem: str, fmt: str) -> Path:
    return directory / f"{stem}.{fmt}"


def write_report(rows: Sequence[tuple], directory: Path, fmt: str = "csv") -> Path:
    path = table_path(directory, "report", fmt)
    frame = pd.DataFrame(list(rows), columns=["depth", "MAE", "MSE"])
    frame.to_csv(path, sep=SEPARATORS[fmt], index=False, float_format=FLOAT_FORMAT)
    return path


def write_traces(traces: Sequence[DepthTrace], directory: Path, fmt: str = "csv") -> List[Path]:
    paths = []
    for trace in traces:
        path = table_path(directory, f"trace_depth{trace.depth}", fmt)
        frame = pd.DataFrame({"n": trace.n, "y": trace.y, "prediction": trace.prediction, "error": trace.error})
        frame.to_csv(path, sep=SEPARATORS[fmt], index=False, float_format=FLOAT_FORMAT)
        paths.append(path)
    return paths


def write_summary(summary: Mapping, directory: Path) -> Path:
    path = directory / "summary.json"
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True, default=str)
    return path
