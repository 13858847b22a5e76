"""Benchmark series and supervised-pair construction.

Lorenz and RLC-circuit series are integrated with fixed-step RK4 (Euler on
request) at ``t = n * step``; the sunspot series is read from a local CSV.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import IngestionError, UsageError

logger = logging.getLogger(__name__)

Rhs = Callable[[float, np.ndarray], np.ndarray]
INTEGRATORS = ("rk4", "euler")

LORENZ_STEP = 0.01
LORENZ_START = (0.0, 1.0, 0.0)
RLC_STEP = 0.008
RLC_START = (0.0, 0.30)
RLC_DAMPING = -0.5
SUNSPOT_MIN_ROWS = 2280


@dataclass(frozen=True)
class TimeSeriesRecord:
    t: int
    state: np.ndarray


@dataclass(frozen=True)
class SupervisedPair:
    x: np.ndarray
    y: float
    n: int


@dataclass(frozen=True, eq=False)
class Series:
    name: str
    values: np.ndarray
    columns: Tuple[str, ...]
    step: Optional[float] = None

    def __len__(self) -> int:
        return self.values.shape[0]

    def records(self) -> Iterator[TimeSeriesRecord]:
        for n, row in enumerate(self.values):
            yield TimeSeriesRecord(t=n, state=row)


@dataclass(frozen=True)
class InputSpec:
    components: Tuple[int, ...]
    lags: int
    target: int
    horizon: int


@dataclass(frozen=True)
class SeriesSpec:
    name: str
    inputs: InputSpec
    n_samples: int
    train_end: int
    validation: Tuple[int, int]
    test: Tuple[int, int]


LORENZ_SPEC = SeriesSpec(
    name="lorenz",
    inputs=InputSpec(components=(0, 1, 2), lags=1, target=1, horizon=5),
    n_samples=8005,
    train_end=3000,
    validation=(2500, 3000),
    test=(3000, 8000),
)
RLC_SPEC = SeriesSpec(
    name="rlc",
    inputs=InputSpec(components=(0, 1), lags=1, target=1, horizon=1),
    n_samples=2501,
    train_end=500,
    validation=(300, 500),
    test=(500, 2500),
)
SUNSPOT_SPEC = SeriesSpec(
    name="sunspot",
    inputs=InputSpec(components=(0,), lags=4, target=0, horizon=1),
    n_samples=SUNSPOT_MIN_ROWS,
    train_end=500,
    validation=(300, 500),
    test=(500, 2280),
)
SERIES_SPECS = {spec.name: spec for spec in (LORENZ_SPEC, RLC_SPEC, SUNSPOT_SPEC)}


# ----------------------------------------------------------- integrators

def rk4_step(rhs: Rhs, t: float, state: np.ndarray, step: float) -> np.ndarray:
    k1 = rhs(t, state)
    k2 = rhs(t + step / 2, state + step / 2 * k1)
    k3 = rhs(t + step / 2, state + step / 2 * k2)
    k4 = rhs(t + step, state + step * k3)
    return state + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def euler_step(rhs: Rhs, t: float, state: np.ndarray, step: float) -> np.ndarray:
    return state + step * rhs(t, state)


def integrate(rhs: Rhs, start: Sequence[float], step: float, n_samples: int, method: str = "rk4") -> np.ndarray:
    if n_samples < 1:
        raise UsageError("n_samples must be at least 1")
    if method not in INTEGRATORS:
        raise UsageError(f"unknown integrator '{method}'", resolution="Use rk4 or euler")
    stepper = rk4_step if method == "rk4" else euler_step
    out = np.empty((n_samples, len(start)))
    state = np.asarray(start, dtype=float)
    out[0] = state
    for n in range(1, n_samples):
        state = stepper(rhs, (n - 1) * step, state, step)
        out[n] = state
    return out


def step_halving_ratio(rhs: Rhs, start: Sequence[float], step: float, n_steps: int,
                       method: str = "rk4", refine: int = 64) -> float:
    """Local error of one ``step`` over that of two ``step / 2`` steps.

    Both are taken from every point of the first ``n_steps`` of the
    trajectory against an RK4 reference with ``refine`` sub-steps, and
    summed. A scheme of order ``q`` gives about ``2 ** q``.
    """
    if method not in INTEGRATORS:
        raise UsageError(f"unknown integrator '{method}'", resolution="Use rk4 or euler")
    stepper = rk4_step if method == "rk4" else euler_step
    path = integrate(rhs, start, step, n_steps + 1, method)
    coarse = fine = 0.0
    sub = step / refine
    for n in range(n_steps):
        t, z = n * step, path[n]
        reference = z
        for k in range(refine):
            reference = rk4_step(rhs, t + k * sub, reference, sub)
        one = stepper(rhs, t, z, step)
        two = stepper(rhs, t + step / 2, stepper(rhs, t, z, step / 2), step / 2)
        coarse += float(np.max(np.abs(one - reference)))
        fine += float(np.max(np.abs(two - reference)))
    return coarse / fine


def lorenz_rhs(t: float, z: np.ndarray) -> np.ndarray:
    sigma = 10.0
    b = (4.0 + 3.0 * (1.0 + math.sin(0.1 * t))) / 3.0
    r = 25.0 + 3.0 * (1.0 + math.cos(2.0 ** (0.001 * t)))
    return np.array([
        sigma * (z[1] - z[0]),
        r * z[0] - z[1] - z[0] * z[2],
        z[0] * z[1] - b * z[2],
    ])


def rlc_rhs(t: float, x: np.ndarray) -> np.ndarray:
    omega = 5.0 * math.cos(0.05 * t)
    return np.array([x[1], -omega ** 2 * x[0] - 2.0 * RLC_DAMPING * x[1]])


def gen_lorenz(n_samples: int = LORENZ_SPEC.n_samples, step: float = LORENZ_STEP,
               start: Sequence[float] = LORENZ_START, method: str = "rk4") -> Series:
    values = integrate(lorenz_rhs, start, step, n_samples, method)
    return Series("lorenz", values, ("z1", "z2", "z3"), step)


def gen_rlc(n_samples: int = RLC_SPEC.n_samples, step: float = RLC_STEP,
            start: Sequence[float] = RLC_START, method: str = "rk4") -> Series:
    values = integrate(rlc_rhs, start, step, n_samples, method)
    return Series("rlc", values, ("xc1", "xc2"), step)


# --------------------------------------------------------------- sunspot

def _decimal_dates(raw: pd.Series) -> np.ndarray:
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().all():
        return numeric.to_numpy(dtype=float)
    stamps = pd.to_datetime(raw.astype(str).str.strip(), errors="coerce")
    if stamps.isna().any():
        bad = raw[stamps.isna()].iloc[0]
        raise IngestionError(f"cannot parse sunspot date '{bad}'",
                             resolution="Dates must be YYYY-MM, YYYY-MM-DD or decimal years")
    return (stamps.dt.year + (stamps.dt.month - 1) / 12.0 + (stamps.dt.day - 1) / 365.25).to_numpy(dtype=float)


def load_sunspot(path, min_rows: int = SUNSPOT_MIN_ROWS) -> Series:
    """Monthly sunspot numbers from a ``date,value`` CSV (header optional)."""
    expected = f"monthly values from 1830 to 2019 (at least {min_rows} rows)"
    file = Path(path)
    if not file.is_file():
        raise IngestionError(f"sunspot file '{path}' not found; expected {expected}")
    frame = pd.read_csv(file, header=None, comment="#", skipinitialspace=True)
    if frame.shape[1] < 2:
        raise IngestionError("sunspot CSV needs a date column and a value column")
    if pd.isna(pd.to_numeric(frame.iloc[0, -1], errors="coerce")):
        frame = frame.iloc[1:].reset_index(drop=True)
    values = pd.to_numeric(frame.iloc[:, -1], errors="coerce")
    if values.isna().any():
        raise IngestionError("sunspot CSV has non-numeric values")
    if len(values) < min_rows:
        raise IngestionError(f"sunspot file has {len(values)} rows; expected {expected}")
    dates = _decimal_dates(frame.iloc[:, 0])
    if np.any(np.diff(dates) <= 0):
        raise IngestionError("sunspot dates must be strictly increasing")
    if (values < 0).any():
        raise IngestionError("sunspot counts must be non-negative")
    logger.info("loaded %d sunspot rows from %s", len(values), file)
    return Series("sunspot", values.to_numpy(dtype=float).reshape(-1, 1), ("xs",), None)


# ---------------------------------------------------------------- pairs

def make_supervised(series: Series, input_spec: InputSpec, horizon: Optional[int] = None) -> List[SupervisedPair]:
    """Pairs with ``x`` from the latest ``lags`` samples at or before ``n``
    (most recent first) and ``y`` the target component at ``n + horizon``."""
    horizon = input_spec.horizon if horizon is None else horizon
    if input_spec.lags < 1 or horizon < 0:
        raise UsageError("input lags must be at least 1 and horizon non-negative")
    values = series.values[:, list(input_spec.components)]
    target = series.values[:, input_spec.target]
    pairs = []
    for n in range(input_spec.lags - 1, len(series) - horizon):
        window = values[n - input_spec.lags + 1: n + 1][::-1]
        pairs.append(SupervisedPair(x=window.reshape(-1).copy(), y=float(target[n + horizon]), n=n))
    return pairs


def split_pairs(pairs: Sequence[SupervisedPair], spec: SeriesSpec):
    """``(train, validation, test)`` by pair position; validation lies inside train."""
    train = list(pairs[: spec.train_end])
    validation = list(pairs[spec.validation[0]: spec.validation[1]])
    test = list(pairs[spec.test[0]: spec.test[1]])
    if not train or not test:
        raise UsageError(f"series too short for the {spec.name} protocol split")
    return train, validation, test


def export_series(series: Series, path, sep: str = ",") -> pd.DataFrame:
    frame = pd.DataFrame(series.values, columns=list(series.columns))
    frame.insert(0, "n", np.arange(len(series)))
    frame.to_csv(path, sep=sep, index=False, float_format="%.17g")
    return frame


def generate(name: str, n_samples: Optional[int] = None, method: str = "rk4") -> Series:
    if name == "lorenz":
        return gen_lorenz(n_samples or LORENZ_SPEC.n_samples, method=method)
    if name == "rlc":
        return gen_rlc(n_samples or RLC_SPEC.n_samples, method=method)
    raise UsageError(f"dataset '{name}' cannot be generated", resolution="Use lorenz or rlc")
