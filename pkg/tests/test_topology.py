import copy
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from app.core.errors import UsageError
from app.engine.datasets import LORENZ_SPEC, gen_lorenz, make_supervised
from app.engine.groups import GroupSettings, SeriesGroup
from app.engine.kernel_core import KernelConfig
from app.engine.precision import PrecisionOptions
from app.engine.topology import (
    StageSpec,
    TopologySpec,
    best_depth_from_errors,
    export_error_channels,
    export_part_channels,
    parse_partition,
    run_online,
    train_construct,
)


@pytest.fixture
def base(unit_kernel):
    return TopologySpec(group=GroupSettings(nu1=0.05, regularizer=1e-3), kernel=unit_kernel)


def with_depth(spec, depth, stages=(StageSpec(),), **kwargs):
    return replace(spec, depth=depth, stages=stages, **kwargs)


class TestPartition:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("(3,3)", (3, 3)),
            ("3, 3", (3, 3)),
            ("(10)", (10,)),
            ("1x6", (1,) * 6),
            ("(1×6)", (1,) * 6),
            ("", ()),
            (None, ()),
        ],
    )
    def test_forms(self, text, expected):
        assert parse_partition(text) == expected

    def test_rejects_garbage(self):
        with pytest.raises(UsageError):
            parse_partition("three,3")

    def test_members_follow_partition(self, base, sine_stream):
        spec = with_depth(base, 1, group=GroupSettings(nu1=1e-3, max_size=6, regularizer=1e-3), partition=(3, 3))
        graph = train_construct(spec, sine_stream)
        parts = graph.cascade[0].parallel
        assert [len(part.members) for part in parts] == [1, 1]
        assert [part.size for part in parts] == [3, 3]

    def test_single_node_members(self, base, sine_stream):
        spec = with_depth(base, 1, group=GroupSettings(nu1=1e-3, regularizer=1e-3), partition=parse_partition("1x6"))
        graph = train_construct(spec, sine_stream)
        assert [part.size for part in graph.cascade[0].parallel] == [1] * 6

    def test_partition_larger_than_selection(self, base, sine_stream):
        spec = with_depth(base, 1, partition=(500, 500))
        with pytest.raises(UsageError):
            train_construct(spec, sine_stream)


class TestParts:
    @pytest.fixture
    def graph(self, base, sine_stream):
        spec = with_depth(base, 1, group=GroupSettings(nu1=1e-3, max_size=6, regularizer=1e-3), partition=(2, 2, 2))
        return train_construct(spec, sine_stream[:100])

    def test_each_part_learns_the_residual_before_it(self, graph, sine_stream):
        parts = graph.cascade[0].parallel
        x, y = sine_stream[100]
        predictions = [part.predict(x) for part in parts]
        graph.step(x, y)
        assert parts[0].target_series[-1] == y
        for k in (1, 2):
            expected = parts[k - 1].target_series[-1] - predictions[k - 1]
            assert parts[k].target_series[-1] == pytest.approx(expected, abs=1e-12)
        assert parts[2].error_series[-1] == pytest.approx(graph.error_trace(1)[-1], abs=1e-12)

    def test_zeroed_part_leaves_earlier_targets(self, graph, sine_stream):
        zeroed = copy.deepcopy(graph)
        member = zeroed.cascade[0].parallel[1].members[0]
        member.state = replace(member.state, alpha=np.zeros_like(member.state.alpha))
        x, y = sine_stream[100]
        graph.step(x, y)
        zeroed.step(x, y)
        original, altered = graph.cascade[0].parallel, zeroed.cascade[0].parallel
        for k in (0, 1):
            assert altered[k].target_series[-1] == original[k].target_series[-1]
        assert altered[2].target_series[-1] == altered[1].target_series[-1]
        assert altered[2].target_series[-1] != original[2].target_series[-1]

    def test_series_per_part(self, graph, sine_stream):
        for part in graph.cascade[0].parallel:
            assert len(part.target_series) == len(part.error_series) == 100
        np.testing.assert_array_equal(graph.cascade[0].parallel[0].target_series, [y for _, y in sine_stream[:100]])

    def test_export(self, graph, sine_stream, tmp_path):
        frame = export_part_channels(graph, tmp_path / "parts.csv")
        assert len(frame) == 300
        loaded = pd.read_csv(tmp_path / "parts.csv", float_precision="round_trip")
        assert list(loaded.columns) == ["n", "part", "target", "error"]
        last = loaded[loaded.part == 3]
        np.testing.assert_array_equal(last["n"], np.arange(100))
        np.testing.assert_allclose(last["error"], graph.cascade[0].parallel[2].error_series, rtol=1e-15)
        first = loaded[loaded.part == 1]
        np.testing.assert_allclose(first["target"], [y for _, y in sine_stream[:100]], rtol=1e-15)


class TestSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [{"depth": 0}, {"depth": 3, "stages": ()}, {"precision_mode": "genetic"}, {"monitor_window": 0}],
    )
    def test_rejects(self, unit_kernel, kwargs):
        with pytest.raises(UsageError):
            TopologySpec(group=GroupSettings(), kernel=unit_kernel, **kwargs)

    def test_last_stage_repeats(self, unit_kernel):
        spec = TopologySpec(
            group=GroupSettings(), kernel=unit_kernel, depth=4,
            stages=(StageSpec("linear_rls", lags=2), StageSpec()),
        )
        assert [spec.stage_for(d).kind for d in (2, 3, 4)] == ["linear_rls", "last_error", "last_error"]

    def test_kernel_stage_needs_kernel(self):
        with pytest.raises(UsageError):
            StageSpec("kernel", lags=2)


class TestGraph:
    def test_depths_add_up(self, base, sine_stream):
        graph = train_construct(with_depth(base, 3, (StageSpec("linear_rls", lags=2),)), sine_stream[:80])
        for record in run_online(graph, sine_stream[80:], start_index=80):
            np.testing.assert_allclose(record.predictions, np.cumsum(record.group_predictions), rtol=1e-14)
            np.testing.assert_allclose(
                record.errors, sine_stream[record.n][1] - np.array(record.predictions), atol=1e-12
            )

    def test_cold_start(self, base, sine_stream):
        graph = train_construct(with_depth(base, 3), sine_stream[:1])
        record = graph.snapshot()
        assert record.n == 0
        assert record.group_predictions == (0.0, 0.0, 0.0)
        assert record.errors == (sine_stream[0][1],) * 3

    def test_first_difference(self, base, sine_stream):
        graph = train_construct(with_depth(base, 2), sine_stream)
        e1, e2 = graph.error_trace(1), graph.error_trace(2)
        assert e2[0] == e1[0]
        np.testing.assert_allclose(e2[1:], np.diff(e1), atol=1e-12)

    def test_higher_differences(self, base, sine_stream):
        graph = train_construct(with_depth(base, 8), sine_stream)
        e1 = graph.error_trace(1)
        for k in range(1, 8):
            np.testing.assert_allclose(graph.error_trace(k + 1)[k:], np.diff(e1, k), rtol=1e-12, atol=1e-12)

    def test_indices_continue_online(self, base, sine_stream):
        graph = train_construct(base, sine_stream[:50])
        records = run_online(graph, sine_stream[50:60], start_index=500)
        assert [r.n for r in records] == list(range(500, 510))
        assert graph.indices[-1] == 509
        assert graph.training_steps == 50

    def test_non_finite_target_skipped(self, base, sine_stream):
        graph = train_construct(base, sine_stream[:20])
        x, _ = sine_stream[20]
        records = run_online(graph, [(x, float("nan")), sine_stream[21]], start_index=20)
        assert [r.n for r in records] == [21]

    def test_frozen_after_training(self, base, sine_stream):
        graph = train_construct(with_depth(base, 1, grow_online=False), sine_stream[:60])
        size = graph.cascade[0].parallel[0].size
        run_online(graph, sine_stream[60:])
        assert graph.cascade[0].parallel[0].size == size

    def test_kernel_stage(self, base, sine_stream):
        stage = StageSpec(
            "kernel", lags=2, group=GroupSettings(nu1=0.05, regularizer=1e-3),
            kernel=base.kernel,
        )
        graph = train_construct(with_depth(base, 2, (stage,)), sine_stream)
        assert graph.cascade[1].series_groups()[0].size >= 1
        assert np.all(np.isfinite(graph.error_trace(2)))

    def test_single_group_matches_standalone_replay(self, base, sine_stream):
        graph = train_construct(base, sine_stream)
        standalone = SeriesGroup(base.group, base.kernel).replay(sine_stream)
        np.testing.assert_array_equal(graph.error_trace(1), standalone)

    def test_lorenz_depth_seven_matches_replay(self):
        pairs = [(p.x, p.y) for p in make_supervised(gen_lorenz(800), LORENZ_SPEC.inputs)[400:700]]
        group = GroupSettings(nu1=0.01, regularizer=1e-6)
        kernel = KernelConfig.isotropic(3, 0.01)
        graph = train_construct(TopologySpec(group=group, kernel=kernel, depth=7), pairs)
        # last-error stages: depth d+1 error is the backward difference of depth d
        errors = [np.array(SeriesGroup(group, kernel).replay(pairs))]
        for _ in range(6):
            previous = errors[-1]
            current = previous.copy()
            current[1:] = previous[1:] - previous[:-1]
            errors.append(current)
        expected = [float(np.mean(e ** 2)) for e in errors]
        measured = [float(np.mean(graph.error_trace(d) ** 2)) for d in range(1, 8)]
        np.testing.assert_allclose(measured, expected, rtol=1e-12)


class TestDepthSelection:
    def test_lowest_windowed_mse(self):
        assert best_depth_from_errors([[2.0, 2.0], [1.0, 1.0]], 2) == 2

    def test_ties_go_to_shallower_depth(self):
        assert best_depth_from_errors([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]], 2) == 1

    def test_window_reads_latest(self):
        assert best_depth_from_errors([[0.0, 5.0], [5.0, 0.0]], 1) == 2

    def test_no_history(self):
        assert best_depth_from_errors([[], []], 5) == 1

    def test_monitored_channel_follows_active_depth(self, base, sine_stream):
        graph = train_construct(with_depth(base, 3, monitor_window=10), sine_stream[:80])
        for record in run_online(graph, sine_stream[80:]):
            assert record.monitored_error == record.errors[record.active_depth - 1]

    def test_auto_depth_drops_differencing(self, base, sine_stream):
        spec = with_depth(base, 4, auto_depth=True)
        graph = train_construct(spec, sine_stream, validation=(60, 120))
        assert graph.depth == 1
        assert len(graph.errors) == 1


class TestPrecisionInTraining:
    @pytest.mark.parametrize("mode", ["ald", "fixed_dict"])
    def test_report_per_group(self, base, sine_stream, mode):
        spec = with_depth(
            base, 1, precision_mode=mode, precision_samples=40,
            precision=PrecisionOptions(generations=2, lambda_c=4, sigma0=0.2, seed=3),
        )
        graph = train_construct(spec, sine_stream[:80])
        assert len(graph.precision_report) == 1
        report = graph.precision_report[0]
        kernel = graph.cascade[0].parallel[0].members[0].kernel
        np.testing.assert_array_equal(kernel.precision, report.precision)


def test_export_error_channels(base, sine_stream, tmp_path):
    graph = train_construct(with_depth(base, 2), sine_stream[:30])
    frame = export_error_channels(graph, tmp_path / "channels.tsv", "\t")
    assert len(frame) == 60
    loaded = pd.read_csv(tmp_path / "channels.tsv", sep="\t", float_precision="round_trip")
    assert list(loaded.columns) == ["n", "depth", "prediction", "error"]
    np.testing.assert_allclose(loaded.loc[loaded.depth == 2, "error"], graph.error_trace(2), rtol=1e-15)
