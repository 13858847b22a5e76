"""Series, parallel and cascade kernel connections.

Depth ``d`` of a ``ConnectionGraph`` predicts ``P_d = P_(d-1) + p_d`` where
``p_1`` is the first cascade group's prediction of ``y`` and ``p_i``
(``i > 1``) is cascade group ``i``'s prediction of the forthcoming depth
``i - 1`` error, built from that depth's recorded error series. Errors are
kept recursively, ``e_d = e_(d-1) - p_d``.
"""
import logging
import re
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import EngineError, UsageError
from app.engine.dictionary import Dictionary, default_distance_threshold
from app.engine.groups import GroupSettings, SeriesGroup, select_dictionary
from app.engine.kernel_core import KernelConfig
from app.engine.precision import (
    PrecisionOptimization,
    PrecisionOptions,
    loss_weights,
    optimize_precision_ald,
    optimize_precision_fixed_dict,
)

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, float]

STAGE_KINDS = ("last_error", "linear_rls", "kernel")
PRECISION_MODES = ("off", "ald", "fixed_dict")
AUTO_DEPTH_GAIN = 0.01


@dataclass(frozen=True)
class StageSpec:
    kind: str = "last_error"
    lags: int = 1
    beta2: float = 1.0
    group: Optional[GroupSettings] = None
    kernel: Optional[KernelConfig] = None

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise UsageError(f"unknown cascade stage '{self.kind}'")
        if self.lags < 1:
            raise UsageError("stage lags must be at least 1")
        if self.kind == "kernel" and (self.group is None or self.kernel is None):
            raise UsageError("kernel stages need group settings and a kernel")


@dataclass(frozen=True)
class TopologySpec:
    group: GroupSettings
    kernel: KernelConfig
    partition: Tuple[int, ...] = ()
    depth: int = 1
    stages: Tuple[StageSpec, ...] = (StageSpec(),)
    auto_depth: bool = False
    monitor_window: int = 50
    grow_online: bool = True
    precision_mode: str = "off"
    precision_samples: int = 300
    precision_weighting: str = "uniform"
    precision_recency: float = 0.99
    precision: PrecisionOptions = field(default_factory=PrecisionOptions)

    def __post_init__(self):
        if self.depth < 1:
            raise UsageError("cascade depth must be at least 1")
        if self.depth > 1 and not self.stages:
            raise UsageError("cascade depth above 1 needs at least one stage")
        if self.precision_mode not in PRECISION_MODES:
            raise UsageError(f"unknown precision mode '{self.precision_mode}'")
        if self.monitor_window < 1:
            raise UsageError("monitor window must be at least 1")
        if any(size < 1 for size in self.partition):
            raise UsageError("partition sizes must be positive")

    def stage_for(self, depth: int) -> StageSpec:
        """Stage of cascade group ``depth`` (2-based); the last listed stage repeats."""
        return self.stages[min(depth - 2, len(self.stages) - 1)]


def parse_partition(text: Optional[str]) -> Tuple[int, ...]:
    """``"(3,3)"``, ``"3,3"`` and ``"1x6"`` / ``"1×6"`` forms."""
    if text is None or not str(text).strip():
        return ()
    cleaned = str(text).strip().replace(" ", "")
    repeat = re.fullmatch(r"\(?(\d+)[x×](\d+)\)?", cleaned)
    if repeat:
        return (int(repeat.group(1)),) * int(repeat.group(2))
    if not re.fullmatch(r"\(?\d+(,\d+)*\)?", cleaned):
        raise UsageError(f"cannot parse partition '{text}'", resolution="Use forms like (3,3), 3,3 or 1x6")
    return tuple(int(part) for part in cleaned.strip("()").split(","))


class ParallelGroup:
    """Series groups trained in order, each on the residual left by those before it.

    ``target_series`` and ``error_series`` hold the target this group was
    trained on and the residual it left, one entry per update.
    """

    def __init__(self, members: List[SeriesGroup]):
        if not members:
            raise UsageError("a parallel group needs at least one series group")
        self.members = members
        self.target_series: List[float] = []
        self.error_series: List[float] = []

    def member_predictions(self, u) -> List[float]:
        return [member.predict(u) for member in self.members]

    def predict(self, u) -> float:
        return float(sum(self.member_predictions(u)))

    def update(self, u, target: float) -> float:
        self.target_series.append(target)
        residual = target
        for member in self.members:
            residual = member.update(u, residual)
        self.error_series.append(residual)
        return residual

    @property
    def size(self) -> int:
        return sum(member.size for member in self.members)


class CascadeGroup:
    """One head-to-tail stage. The first reads the raw input; later ones
    read the last ``lags`` errors of the previous depth, most recent first."""

    def __init__(self, parallel: List[ParallelGroup], lags: Optional[int] = None, kind: str = "raw"):
        self.parallel = parallel
        self.lags = lags
        self.kind = kind
        self.output_error_series: List[float] = []

    @property
    def reads_raw_input(self) -> bool:
        return self.lags is None

    def input_vector(self, x, upstream_errors: Sequence[float]) -> Optional[np.ndarray]:
        if self.reads_raw_input:
            return np.asarray(x, dtype=float).reshape(-1)
        if len(upstream_errors) < self.lags:
            return None
        return np.asarray(upstream_errors[-1: -self.lags - 1: -1], dtype=float)

    def predict(self, u) -> float:
        total = 0.0
        for group in self.parallel:
            total += group.predict(u)
        return total

    def update(self, u, target: float) -> float:
        residual = target
        for group in self.parallel:
            residual = group.update(u, residual)
        return residual

    def series_groups(self) -> List[SeriesGroup]:
        return [member for group in self.parallel for member in group.members]


@dataclass(frozen=True)
class StepRecord:
    n: int
    predictions: Tuple[float, ...]
    errors: Tuple[float, ...]
    group_predictions: Tuple[float, ...]
    active_depth: int
    monitored_prediction: float
    monitored_error: float


class ConnectionGraph:
    def __init__(self, cascade: List[CascadeGroup], monitor_window: int = 50):
        if not cascade:
            raise UsageError("a connection graph needs at least one cascade group")
        self.cascade = cascade
        self.monitor_window = monitor_window
        self.active_depth = 1
        self.indices: List[int] = []
        self.errors: List[List[float]] = [[] for _ in cascade]
        self.predictions: List[List[float]] = [[] for _ in cascade]
        self.monitored_errors: List[float] = []
        self.precision_report: List[PrecisionOptimization] = []
        self.training_steps = 0
        self._last: Optional[StepRecord] = None

    @property
    def depth(self) -> int:
        return len(self.cascade)

    def group_predictions(self, x) -> Tuple[List[float], List[Optional[np.ndarray]]]:
        """Every cascade group's own prediction from history up to the previous step."""
        inputs: List[Optional[np.ndarray]] = []
        preds: List[float] = []
        for i, group in enumerate(self.cascade):
            upstream = self.errors[i - 1] if i > 0 else ()
            u = group.input_vector(x, upstream)
            inputs.append(u)
            preds.append(0.0 if u is None else group.predict(u))
        return preds, inputs

    def predict(self, x, depth: Optional[int] = None) -> float:
        depth = self.depth if depth is None else depth
        if not 1 <= depth <= self.depth:
            raise UsageError(f"depth must lie in 1..{self.depth}")
        preds, _ = self.group_predictions(x)
        total = preds[0]
        for p in preds[1:depth]:
            total = total + p
        return total

    def step(self, x, y: float, n: Optional[int] = None) -> Optional[StepRecord]:
        """Predict at every depth, then learn from ``y`` in cascade order."""
        n = len(self.indices) if n is None else n
        preds, inputs = self.group_predictions(x)
        if not np.isfinite(y):
            logger.warning("non-finite target skipped at step %d", n)
            return None

        cumulative = [preds[0]]
        errors = [y - preds[0]]
        for p in preds[1:]:
            cumulative.append(cumulative[-1] + p)
            errors.append(errors[-1] - p)

        active = self.active_depth
        monitored_prediction = cumulative[active - 1]
        monitored_error = errors[active - 1]

        targets = [y] + errors[:-1]
        for group, u, target in zip(self.cascade, inputs, targets):
            if u is not None:
                group.output_error_series.append(group.update(u, target))

        self.indices.append(n)
        for d in range(self.depth):
            self.errors[d].append(errors[d])
            self.predictions[d].append(cumulative[d])
        self.monitored_errors.append(monitored_error)
        self.active_depth = select_best_depth(self, self.monitor_window)

        self._last = StepRecord(
            n=n,
            predictions=tuple(cumulative),
            errors=tuple(errors),
            group_predictions=tuple(preds),
            active_depth=active,
            monitored_prediction=monitored_prediction,
            monitored_error=monitored_error,
        )
        return self._last

    def snapshot(self) -> Optional[StepRecord]:
        return self._last

    def series_groups(self) -> List[SeriesGroup]:
        return [member for group in self.cascade for member in group.series_groups()]

    def freeze(self):
        for member in self.series_groups():
            member.freeze()

    def truncate(self, depth: int):
        self.cascade = self.cascade[:depth]
        self.errors = self.errors[:depth]
        self.predictions = self.predictions[:depth]
        self.active_depth = min(self.active_depth, depth)

    def error_trace(self, depth: int) -> np.ndarray:
        return np.asarray(self.errors[depth - 1])

    def prediction_trace(self, depth: int) -> np.ndarray:
        return np.asarray(self.predictions[depth - 1])


def best_depth_from_errors(errors_per_depth: Sequence[Sequence[float]], window: int) -> int:
    if window < 1:
        raise UsageError("monitor window must be at least 1")
    if not errors_per_depth or len(errors_per_depth[0]) == 0:
        return 1
    scores = [float(np.mean(np.square(np.asarray(errs[-window:], dtype=float)))) for errs in errors_per_depth]
    return int(np.argmin(scores)) + 1


def select_best_depth(graph: ConnectionGraph, window: int) -> int:
    return best_depth_from_errors(graph.errors, window)


def export_error_channels(graph: ConnectionGraph, path, sep: str = ",") -> pd.DataFrame:
    rows = []
    for d in range(1, graph.depth + 1):
        for n, prediction, error in zip(graph.indices, graph.prediction_trace(d), graph.error_trace(d)):
            rows.append((n, d, prediction, error))
    frame = pd.DataFrame(rows, columns=["n", "depth", "prediction", "error"])
    frame.to_csv(path, sep=sep, index=False, float_format="%.17g")
    return frame


def export_part_channels(graph: ConnectionGraph, path, sep: str = ",") -> pd.DataFrame:
    """Target and residual of every parallel group of the first cascade group."""
    rows = []
    for part, group in enumerate(graph.cascade[0].parallel, start=1):
        indices = graph.indices[len(graph.indices) - len(group.error_series):]
        for n, target, error in zip(indices, group.target_series, group.error_series):
            rows.append((n, part, target, error))
    frame = pd.DataFrame(rows, columns=["n", "part", "target", "error"])
    frame.to_csv(path, sep=sep, index=False, float_format="%.17g")
    return frame


# ------------------------------------------------------------- training

def _stage_group(stage: StageSpec) -> CascadeGroup:
    if stage.kind == "last_error":
        member = SeriesGroup(GroupSettings(updater="last_error"))
        lags = 1
    elif stage.kind == "linear_rls":
        member = SeriesGroup(GroupSettings(updater="linear_rls", p_r=stage.lags, beta2=stage.beta2), input_dim=stage.lags)
        lags = stage.lags
    else:
        if stage.kernel.dim != stage.lags:
            raise UsageError("kernel stage dimension must equal its lag count")
        member = SeriesGroup(stage.group, stage.kernel)
        lags = stage.lags
    return CascadeGroup([ParallelGroup([member])], lags=lags, kind=stage.kind)


def _precision_search(group: SeriesGroup, pairs: Sequence[Pair], spec: TopologySpec) -> PrecisionOptimization:
    omega = loss_weights(len(pairs), spec.precision_weighting, spec.precision_recency)
    if spec.precision_mode == "ald":
        return optimize_precision_ald(group, pairs, omega, spec.precision)
    return optimize_precision_fixed_dict(group, pairs, omega, spec.precision)


def _first_group(spec: TopologySpec, group_settings: GroupSettings, train: Sequence[Pair],
                 reports: List[PrecisionOptimization]) -> CascadeGroup:
    kernel = spec.kernel
    tail = list(train)[-spec.precision_samples:]
    partitioned = len(spec.partition) > 1

    if not partitioned:
        template = SeriesGroup(group_settings, kernel, _template_dictionary(group_settings, kernel))
        if spec.precision_mode != "off":
            report = _precision_search(template, tail, spec)
            reports.append(report)
            kernel = kernel.with_precision(report.precision)
        if group_settings.sparsifier in ("ofs", "fixed"):
            group = SeriesGroup(group_settings, kernel, select_dictionary(template, train, kernel))
        else:
            group = SeriesGroup(group_settings, kernel)
        return CascadeGroup([ParallelGroup([group])])

    total = sum(spec.partition)
    sizing = replace(group_settings, max_size=group_settings.max_size or total)
    template = SeriesGroup(sizing, kernel, _template_dictionary(sizing, kernel))
    dictionary = select_dictionary(template, train, kernel)
    if dictionary.size != total:
        raise UsageError(
            f"partition {spec.partition} sums to {total} but selection kept {dictionary.size} nodes",
            resolution="Lower the sparsification threshold or change the partition",
        )
    fixed = replace(group_settings, sparsifier="fixed", max_size=None, replace_when_full=False)
    members: List[SeriesGroup] = []
    start = 0
    for size in spec.partition:
        chunk = Dictionary.from_centers(kernel, dictionary.centers[start:start + size])
        start += size
        member = SeriesGroup(fixed, kernel, chunk)
        if spec.precision_mode != "off":
            targets = _residual_pairs(members, tail)
            report = _precision_search(member, targets, spec)
            reports.append(report)
            tuned = kernel.with_precision(report.precision)
            member = SeriesGroup(fixed, tuned, chunk.with_kernel(tuned))
        members.append(member)
    # one parallel group per part, each trained on the residual of the parts before it
    return CascadeGroup([ParallelGroup([member]) for member in members])


def _template_dictionary(group_settings: GroupSettings, kernel: KernelConfig) -> Optional[Dictionary]:
    # OFS and fixed templates need some dictionary to exist; selection replaces it
    if group_settings.sparsifier in ("ofs", "fixed"):
        return Dictionary.empty(kernel, group_settings.max_size)
    return None


def _residual_pairs(members: List[SeriesGroup], pairs: Sequence[Pair]) -> List[Pair]:
    """Targets left for the next member after fresh replays of ``members`` in order."""
    replays = [member.spawn(member.kernel, member.dictionary) for member in members]
    out = []
    for x, y in pairs:
        residual = y
        for replay_member in replays:
            residual = replay_member.update(x, residual)
        out.append((x, residual))
    return out


def _auto_depth(graph: ConnectionGraph, validation: Tuple[int, int]) -> int:
    start, end = validation
    scores = [float(np.mean(np.square(errs[start:end]))) for errs in graph.errors]
    depth = 1
    while depth < len(scores) and scores[depth] < (1.0 - AUTO_DEPTH_GAIN) * scores[depth - 1]:
        depth += 1
    return depth


def _step(graph: ConnectionGraph, x, y: float, n: int) -> Optional[StepRecord]:
    try:
        return graph.step(x, y, n)
    except EngineError as exc:
        if exc.step is None:
            exc.step = n
        raise


def train_construct(
    spec: TopologySpec,
    training_stream: Sequence[Pair],
    validation: Optional[Tuple[int, int]] = None,
) -> ConnectionGraph:
    """Build and train the graph on ``training_stream`` (prequentially).

    ``validation`` is a ``(start, end)`` slice of the training stream used
    for automatic depth selection.
    """
    train = list(training_stream)
    if not train:
        raise UsageError("training stream is empty")
    group_settings = spec.group
    if group_settings.sparsifier == "distance" and group_settings.nu2 is None:
        nu2 = default_distance_threshold([x for x, _ in train])
        group_settings = replace(group_settings, nu2=nu2)
        logger.info("distance threshold nu2 set to %.6g from the training inputs", nu2)

    reports: List[PrecisionOptimization] = []
    cascade = [_first_group(spec, group_settings, train, reports)]
    for depth in range(2, spec.depth + 1):
        cascade.append(_stage_group(spec.stage_for(depth)))
    graph = ConnectionGraph(cascade, spec.monitor_window)
    graph.precision_report = reports

    for n, (x, y) in enumerate(train):
        _step(graph, x, y, n)
    graph.training_steps = len(train)

    if spec.auto_depth and graph.depth > 1:
        window = validation or (max(0, len(train) - spec.monitor_window), len(train))
        chosen = _auto_depth(graph, window)
        if chosen < graph.depth:
            logger.info("automatic depth stopped at %d of %d", chosen, graph.depth)
            graph.truncate(chosen)
    if not spec.grow_online:
        graph.freeze()
    logger.info(
        "trained %d cascade groups on %d samples; first group holds %d nodes",
        graph.depth, len(train), sum(p.size for p in graph.cascade[0].parallel),
    )
    return graph


def run_online(graph: ConnectionGraph, stream: Sequence[Pair], start_index: int = 0) -> List[StepRecord]:
    records = []
    for offset, (x, y) in enumerate(stream):
        record = _step(graph, x, y, start_index + offset)
        if record is not None:
            records.append(record)
    return records
