"""Built-in acceptance checks run by ``cli verify``.

Each check returns a ``CheckResult``; a check that raises is reported as
failed with the exception message instead of aborting the suite.
"""
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.errors import EngineError
from app.engine.cmaes import Termination, optimize
from app.engine.datasets import (
    LORENZ_SPEC,
    LORENZ_START,
    LORENZ_STEP,
    RLC_START,
    RLC_STEP,
    gen_lorenz,
    gen_rlc,
    lorenz_rhs,
    make_supervised,
    rlc_rhs,
    step_halving_ratio,
)
from app.engine.dictionary import Dictionary, ald_admit, ald_test
from app.engine.groups import GroupSettings, SeriesGroup
from app.engine.kernel_core import KernelConfig
from app.engine.precision import PrecisionOptions, loss_weights, optimize_precision_ald, optimize_precision_fixed_dict
from app.engine.topology import TopologySpec, train_construct
from app.engine.weight_update import batch_ls_oracle, krls_init, krls_step, linear_rls_init, linear_rls_step, mrls_init, mrls_step

from .schemas import ExperimentConfig
from .services import run_experiment
from .utils import validate_config

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: Optional[bool]
    detail: str = ""
    seconds: float = 0.0

    @property
    def status(self) -> str:
        return "skip" if self.passed is None else ("pass" if self.passed else "FAIL")


LORENZ_TREND = {
    "experiment": {"name": "verify-lorenz"},
    "dataset": {"name": "lorenz"},
    "algorithm": {"sparsifier": "ald", "updater": "krls", "nu1": 0.01, "regularizer": 0.0,
                  "precision": 0.01, "h0": 1.0, "max_size": 300},
    "topology": {"depth": 7, "stages": ["last_error"]},
    "output": {"write_files": False},
}
RLC_TREND = {
    "experiment": {"name": "verify-rlc"},
    "dataset": {"name": "rlc"},
    "algorithm": {"sparsifier": "ald", "updater": "krls", "nu1": 0.01, "regularizer": 0.0,
                  "precision": 1.0, "h0": 1.0, "max_size": 200},
    "topology": {"depth": 7, "stages": ["last_error"]},
    "output": {"write_files": False},
}
SHORT_RLC = {
    "experiment": {"name": "verify-determinism", "seed": 3},
    "dataset": {"name": "rlc", "n_samples": 601, "train_end": 200, "validation_start": 100,
                "validation_end": 200, "test_start": 200, "test_end": 600},
    "algorithm": {"sparsifier": "ald", "updater": "krls", "nu1": 0.01, "regularizer": 0.0,
                  "precision": 1.0, "max_size": 100},
    "topology": {"depth": 4, "stages": ["last_error"]},
}


# ------------------------------------------------------------------ oracles

def krls_oracle_gap(seed: int = 0, n: int = 50, max_size: int = 10, nu1: float = 0.1) -> float:
    """Largest gap between recursive KRLS weights and the batch solution of ``(A K) w = y``."""
    rng = np.random.default_rng(seed)
    kernel = KernelConfig.isotropic(2, 1.0)
    xs = rng.uniform(-1.0, 1.0, (n, 2))
    ys = np.sin(2.0 * xs[:, 0]) + xs[:, 1] ** 2
    dictionary = Dictionary.empty(kernel, max_size)
    state = krls_init(0.0)
    rows: List[np.ndarray] = []
    gap = 0.0
    for x, y in zip(xs, ys):
        ald = ald_test(dictionary, x) if dictionary.size else None
        if ald is None or (ald.delta1 > nu1 and not dictionary.is_full):
            dictionary = ald_admit(dictionary, x, ald)
            state = krls_step(state, dictionary, x, y, True, ald)
            rows = [np.append(row, 0.0) for row in rows]
            rows.append(np.eye(dictionary.size)[-1])
        else:
            state = krls_step(state, dictionary, x, y, False, ald)
            rows.append(ald.alpha)
        design = np.vstack(rows) @ dictionary.gram
        oracle = batch_ls_oracle(design, ys[: len(rows)])
        gap = max(gap, float(np.max(np.abs(state.alpha - oracle))))
    return gap


def ald_oracle_gap(cases: int = 1000, seed: int = 0) -> float:
    """Largest gap between ``ald_test`` and a direct least-squares projection."""
    rng = np.random.default_rng(seed)
    kernel = KernelConfig.isotropic(3, 0.5)
    gap = 0.0
    for _ in range(cases):
        dictionary = Dictionary.empty(kernel)
        for x in rng.uniform(-2.0, 2.0, (int(rng.integers(2, 12)), 3)):
            ald = ald_test(dictionary, x) if dictionary.size else None
            if ald is None or ald.delta1 > 0.1:
                dictionary = ald_admit(dictionary, x, ald)
        x = rng.uniform(-2.0, 2.0, 3)
        k = dictionary.kernel_vector(x)
        a = np.linalg.lstsq(dictionary.gram, k, rcond=None)[0]
        direct = max(1.0 - 2.0 * a @ k + a @ dictionary.gram @ a, 0.0)
        gap = max(gap, abs(ald_test(dictionary, x).delta1 - direct))
    return gap


def mrls_rls_gap(steps: int = 200, m: int = 4, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    mrls = mrls_init(m, beta=1.0, p=1)
    rls = linear_rls_init(m, beta2=1.0)
    gap = 0.0
    for _ in range(steps):
        k = rng.uniform(0.0, 1.0, m)
        y = float(k @ np.arange(1.0, m + 1.0) + 0.01 * rng.standard_normal())
        mrls, _ = mrls_step(mrls, k, y)
        rls, _ = linear_rls_step(rls, k, y)
        if not np.array_equal(mrls.P, mrls.P.T) or np.linalg.eigvalsh(mrls.P)[0] <= 0:
            return math.inf
        gap = max(gap, float(np.max(np.abs(mrls.alpha - rls.theta))))
    return gap


def sphere(x: np.ndarray) -> float:
    return float(np.sum(np.square(x)))


# ------------------------------------------------------------------ checks

def check_krls_oracle() -> CheckResult:
    gap = krls_oracle_gap()
    return CheckResult("KRLS = batch least squares", gap <= 1e-7, f"max gap {gap:.2e}")


def check_ald_oracle(cases: int) -> CheckResult:
    gap = ald_oracle_gap(cases)
    return CheckResult("ALD residual = direct projection", gap <= 1e-8, f"{cases} cases, max gap {gap:.2e}")


def check_mrls_reduction() -> CheckResult:
    gap = mrls_rls_gap()
    return CheckResult("MRLS(p=1, beta=1) = RLS", gap <= 1e-9, f"max gap {gap:.2e}")


def check_cmaes() -> CheckResult:
    bests = []
    for seed in range(3):
        result = optimize(sphere, 3.0 * np.ones(5), 2.0,
                          termination=Termination(max_evaluations=5000, f_target=1e-10, f_tolerance=None),
                          seed=seed)
        bests.append(result.best_f)
    plain = optimize(sphere, 3.0 * np.ones(5), 2.0, termination=Termination(max_generations=30, f_tolerance=None, sigma_floor=None), seed=7)
    scaled = optimize(lambda x: 4.0 * sphere(x) ** 3, 3.0 * np.ones(5), 2.0,
                      termination=Termination(max_generations=30, f_tolerance=None, sigma_floor=None), seed=7)
    invariant = plain.selected == scaled.selected and all(
        np.array_equal(a, b) for a, b in zip(plain.means, scaled.means)
    )
    passed = all(b <= 1e-10 for b in bests) and invariant
    return CheckResult("CMA-ES sphere and rank invariance", passed,
                       f"best f {max(bests):.1e}, rank invariant: {invariant}")


def lorenz_slice(start: int = 1000, size: int = 300) -> List[Tuple[np.ndarray, float]]:
    pairs = make_supervised(gen_lorenz(start + size + 200), LORENZ_SPEC.inputs)[start:start + size]
    return [(p.x, p.y) for p in pairs]


def precision_gain(seed: int, fixed_dictionary: bool, generations: int = 20) -> float:
    """Relative drop of the evaluation loss from an isotropic incumbent.

    The reselecting search runs ALD-KRLS from a wide kernel. The
    fixed-dictionary search runs on a distance-criterion dictionary, whose
    nodes do not depend on the precision, from a kernel narrower than the
    node spacing; ``c0`` close to 1 lets a candidate widen it.
    """
    data = lorenz_slice()
    if fixed_dictionary:
        group = SeriesGroup(GroupSettings(sparsifier="distance", nu2=25.0, regularizer=1e-6),
                            KernelConfig.isotropic(3, 1.0))
        options = PrecisionOptions(generations=generations, sigma0=0.1, c0=0.99, seed=seed)
        result = optimize_precision_fixed_dict(group, data, loss_weights(len(data)), options)
    else:
        group = SeriesGroup(GroupSettings(nu1=0.01, regularizer=1e-6), KernelConfig.isotropic(3, 1e-4))
        options = PrecisionOptions(generations=generations, sigma0=0.1, seed=seed)
        result = optimize_precision_ald(group, data, loss_weights(len(data)), options)
    return 1.0 - result.best_loss / result.incumbent_loss


def check_precision_gain() -> CheckResult:
    gains = {
        name: float(np.median([precision_gain(seed, fixed) for seed in range(5)]))
        for name, fixed in (("reselecting", False), ("fixed dictionary", True))
    }
    passed = all(gain >= 0.2 for gain in gains.values())
    return CheckResult("precision search lowers L_sigma by 20%", passed,
                       ", ".join(f"{k} {v:.0%}" for k, v in gains.items()))


def check_differencing(max_order: int = 7) -> CheckResult:
    rng = np.random.default_rng(11)
    stream = [(rng.uniform(-1.0, 1.0, 2), float(v)) for v in rng.standard_normal(200)]
    spec = TopologySpec(group=GroupSettings(nu1=0.05), kernel=KernelConfig.isotropic(2), depth=max_order + 1)
    graph = train_construct(spec, stream)
    base = graph.error_trace(1)
    gap = 0.0
    for k in range(1, max_order + 1):
        expected = np.diff(base, k)
        gap = max(gap, float(np.max(np.abs(graph.error_trace(k + 1)[k:] - expected))))
    return CheckResult("compensator stages = backward differences", gap <= 1e-12,
                       f"orders 1..{max_order}, max gap {gap:.1e}")


def check_integrators() -> CheckResult:
    ratios = {
        "lorenz": step_halving_ratio(lorenz_rhs, LORENZ_START, LORENZ_STEP, 100),
        "rlc": step_halving_ratio(rlc_rhs, RLC_START, RLC_STEP, 100),
    }
    starts = (
        np.array_equal(gen_lorenz(3).values[0], LORENZ_START)
        and np.array_equal(gen_rlc(3).values[0], RLC_START)
    )
    passed = starts and all(8.0 <= r <= 32.0 for r in ratios.values())
    return CheckResult("RK4 order and initial states", passed,
                       ", ".join(f"{k} ratio {v:.1f}" for k, v in ratios.items()))


def trend_check(name: str, data: dict) -> CheckResult:
    report = run_experiment(validate_config(data), write_files=False)
    mse = [m.mse for m in report.depths]
    best = int(np.argmin(mse))
    decreasing = len(mse) > 2 and mse[1] < mse[0] and mse[2] < mse[1]
    interior = 0 < best < len(mse) - 1
    passed = decreasing and interior and mse[best] <= 0.2 * mse[0]
    table = " ".join(f"{v:.3g}" for v in mse)
    return CheckResult(f"{name} cascade trend", passed, f"MSE by depth: {table}")


def check_sunspot(path: Optional[str]) -> CheckResult:
    if not path:
        return CheckResult("sunspot linear-RLS stage", None, "no sunspot CSV given")
    config = validate_config({
        "experiment": {"name": "verify-sunspot"},
        "dataset": {"name": "sunspot", "path": path},
        "algorithm": {"sparsifier": "ald", "updater": "krls", "nu1": 0.01, "regularizer": 0.0,
                      "precision": 1e-4, "max_size": 200},
        "topology": {"depth": 2, "stages": ["linear_rls"], "lags": 4, "beta2": 0.99},
        "output": {"write_files": False},
    })
    mse = [m.mse for m in run_experiment(config).depths]
    return CheckResult("sunspot linear-RLS stage", mse[1] < mse[0], f"R_a {mse[0]:.4g}, R_b {mse[1]:.4g}")


def check_determinism() -> CheckResult:
    config = ExperimentConfig.model_validate(SHORT_RLC)
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        run_experiment(config, out=first, write_files=True)
        run_experiment(config, out=second, write_files=True)
        name = config.experiment.name
        same = (Path(first) / name / "report.csv").read_bytes() == (Path(second) / name / "report.csv").read_bytes()
    return CheckResult("report.csv is reproducible", same, "two runs, same seed")


def run_checks(quick: bool = False, sunspot: Optional[str] = None) -> List[CheckResult]:
    checks: List[Tuple[str, Callable[[], CheckResult]]] = [
        ("KRLS oracle", check_krls_oracle),
        ("ALD oracle", lambda: check_ald_oracle(200 if quick else 1000)),
        ("MRLS reduction", check_mrls_reduction),
        ("CMA-ES", check_cmaes),
        ("differencing", check_differencing),
        ("integrators", check_integrators),
        ("determinism", check_determinism),
    ]
    if not quick:
        checks += [
            ("precision search", check_precision_gain),
            ("Lorenz trend", lambda: trend_check("Lorenz", LORENZ_TREND)),
            ("RLC trend", lambda: trend_check("RLC", RLC_TREND)),
            ("sunspot", lambda: check_sunspot(sunspot)),
        ]
    results = []
    for label, check in checks:
        started = time.perf_counter()
        try:
            result = check()
        except EngineError as exc:
            result = CheckResult(label, False, exc.message)
        result.seconds = time.perf_counter() - started
        logger.info("%s: %s (%s)", result.name, result.status, result.detail)
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    frame = pd.DataFrame(
        [(r.name, r.status, r.seconds, r.detail) for r in results],
        columns=["check", "status", "seconds", "detail"],
    )
    return frame.to_string(index=False, justify="left", float_format=lambda v: f"{v:.2f}")
