"""Intermittent optimization of a group's kernel precision with CMA-ES.

Two candidate forms are searched:

- ``full``: the search vector is ``p_sigma`` and a candidate precision is
  the rank-one update ``(1 - c0) P + sign * p_sigma p_sigma^T`` of the
  incumbent ``P``.
- ``diagonal``: the search vector holds one log-scale per input and a
  candidate is ``diag(P) * exp(2 s)``.

A candidate's loss is the weighted squared a-priori error of a fresh copy
of the group replayed over the evaluation pairs.

- ``optimize_precision_ald``: every candidate reruns dictionary selection
  and weight updating.
- ``optimize_precision_fixed_dict``: the dictionary is selected once under
  the incumbent precision; candidates rerun weight updating only.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.errors import EngineError, NumericError, UsageError
from app.engine.cmaes import CmaesParams, Termination, optimize
from app.engine.dictionary import Dictionary
from app.engine.groups import SeriesGroup, select_dictionary
from app.engine.kernel_core import KernelConfig, project_to_floor, rank_one_precision_update

logger = logging.getLogger(__name__)

Pairs = Sequence[Tuple[np.ndarray, float]]

WEIGHTINGS = ("uniform", "recency")
FORMS = ("full", "diagonal")


@dataclass(frozen=True)
class PrecisionOptions:
    generations: int = 20
    sigma0: Optional[float] = None
    sign: int = 1
    c0: Optional[float] = None
    seed: int = 0
    workers: int = 1
    lambda_c: Optional[int] = None
    stagnation_generations: int = 5
    stagnation_tolerance: float = 1e-4
    form: str = "full"

    def __post_init__(self):
        if self.form not in FORMS:
            raise UsageError(f"unknown precision form '{self.form}'", resolution="Use full or diagonal")


@dataclass
class PrecisionOptimization:
    precision: np.ndarray
    incumbent_loss: float
    best_loss: float
    accepted: bool
    selection_runs: int
    history: List[float] = field(default_factory=list)
    generations: int = 0


class SelectionTally:
    """Counts dictionary selections; candidates may be scored on worker threads."""

    def __init__(self):
        self.runs = 0
        self._lock = threading.Lock()

    def add(self, runs: int = 1):
        with self._lock:
            self.runs += runs


def loss_weights(n: int, scheme: str = "uniform", recency: float = 0.99) -> np.ndarray:
    """Uniform weights, or ``rho^(N-1-j)`` favouring the latest pairs; both sum to 1."""
    if n < 1:
        raise UsageError("loss weights need at least one sample")
    if scheme == "uniform":
        weights = np.ones(n)
    elif scheme == "recency":
        if not 0.0 < recency <= 1.0:
            raise UsageError("recency factor must lie in (0, 1]")
        weights = recency ** np.arange(n - 1, -1, -1, dtype=float)
    else:
        raise UsageError(f"unknown loss weighting '{scheme}'")
    return weights / weights.sum()


def decode_candidate(kernel: KernelConfig, candidate, c0: Optional[float] = None, sign: int = 1,
                     form: str = "full") -> KernelConfig:
    if form == "diagonal":
        scales = np.asarray(candidate, dtype=float).reshape(-1)
        if scales.size != kernel.dim:
            raise UsageError(f"log-scale vector has {scales.size} entries, kernel dimension is {kernel.dim}")
        with np.errstate(over="ignore"):
            diagonal = np.diag(kernel.precision) * np.exp(2.0 * scales)
        if not np.all(np.isfinite(diagonal)):
            raise NumericError("diagonal precision candidate overflows")
        return kernel.with_precision(project_to_floor(np.diag(diagonal), kernel.eigen_floor))
    if form != "full":
        raise UsageError(f"unknown precision form '{form}'")
    node = kernel.node(np.zeros(kernel.dim))
    updated = rank_one_precision_update(node, candidate, c0=c0, sign=sign, eigen_floor=kernel.eigen_floor)
    return kernel.with_precision(updated.precision)


def _check_weights(D_sigma: Pairs, omega_sigma) -> np.ndarray:
    omega = np.asarray(omega_sigma, dtype=float).reshape(-1)
    if len(D_sigma) == 0:
        raise UsageError("the evaluation set D_sigma is empty")
    if omega.size != len(D_sigma):
        raise UsageError("omega_sigma must have one weight per evaluation pair")
    if np.any(omega < 0):
        raise UsageError("omega_sigma must be non-negative")
    return omega


def replay_loss(group: SeriesGroup, kernel: KernelConfig, D_sigma: Pairs, omega: np.ndarray,
                dictionary: Optional[Dictionary] = None, tally: Optional[SelectionTally] = None) -> float:
    """Weighted SSE of a fresh copy of ``group`` under ``kernel``; +inf on failure."""
    try:
        if dictionary is not None:
            fresh = group.spawn(kernel, dictionary.with_kernel(kernel))
        elif group.settings.sparsifier in ("ofs", "fixed"):
            chosen = select_dictionary(group, D_sigma, kernel)
            if tally is not None:
                tally.add()
            fresh = group.spawn(kernel, chosen)
        else:
            fresh = group.spawn(kernel)
        if tally is not None:
            # a copy without a dictionary selects its own while replaying
            tally.add(fresh.selection_runs)
        errors = np.asarray(fresh.replay(D_sigma))
    except (EngineError, linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        logger.debug("candidate replay failed: %s", exc)
        return math.inf
    loss = float(omega @ errors ** 2)
    return loss if math.isfinite(loss) else math.inf


def kernel_cov_objective(
    group: SeriesGroup,
    D_sigma: Pairs,
    omega_sigma,
    p_sigma_candidate,
    sign: int = 1,
    c0: Optional[float] = None,
    dictionary: Optional[Dictionary] = None,
    form: str = "full",
    tally: Optional[SelectionTally] = None,
) -> float:
    omega = _check_weights(D_sigma, omega_sigma)
    try:
        kernel = decode_candidate(group.kernel, p_sigma_candidate, c0, sign, form)
    except EngineError:
        return math.inf
    return replay_loss(group, kernel, D_sigma, omega, dictionary, tally)


def _default_sigma0(kernel: KernelConfig, form: str) -> float:
    if form == "diagonal":
        return 0.5
    return 0.5 * math.sqrt(float(np.trace(kernel.precision)) / kernel.dim)


def _optimize(group: SeriesGroup, D_sigma: Pairs, omega_sigma, options: PrecisionOptions,
              fixed_dictionary: bool) -> PrecisionOptimization:
    if group.kernel is None:
        raise UsageError("precision optimization needs a kernel group")
    omega = _check_weights(D_sigma, omega_sigma)
    incumbent = group.kernel
    if options.generations <= 0:
        return PrecisionOptimization(incumbent.precision, math.nan, math.nan, False, 0)

    tally = SelectionTally()
    dictionary = None
    if fixed_dictionary:
        dictionary = select_dictionary(group, D_sigma)
        tally.add()
    incumbent_loss = replay_loss(group, incumbent, D_sigma, omega, dictionary, tally)

    def objective(candidate: np.ndarray) -> float:
        return kernel_cov_objective(group, D_sigma, omega, candidate, options.sign, options.c0,
                                    dictionary, options.form, tally)

    sigma0 = options.sigma0 or _default_sigma0(incumbent, options.form)
    result = optimize(
        objective,
        np.zeros(incumbent.dim),
        sigma0,
        CmaesParams.default(incumbent.dim, options.lambda_c),
        Termination(
            max_generations=options.generations,
            f_tolerance=None,
            sigma_floor=None,
            stagnation_generations=options.stagnation_generations,
            stagnation_tolerance=options.stagnation_tolerance,
        ),
        seed=options.seed,
        workers=options.workers,
    )
    accepted = result.best_f < incumbent_loss
    precision = incumbent.precision
    if accepted:
        precision = decode_candidate(incumbent, result.best_x, options.c0, options.sign, options.form).precision
    logger.info(
        "precision search (%s, %s form): L_sigma %.6g -> %.6g after %d generations, %d selections, %s",
        "fixed dictionary" if fixed_dictionary else "reselecting", options.form,
        incumbent_loss, min(result.best_f, incumbent_loss), result.generations, tally.runs,
        "accepted" if accepted else "kept incumbent",
    )
    return PrecisionOptimization(
        precision=precision,
        incumbent_loss=incumbent_loss,
        best_loss=min(result.best_f, incumbent_loss),
        accepted=accepted,
        selection_runs=tally.runs,
        history=list(result.history),
        generations=result.generations,
    )


def optimize_precision_ald(group: SeriesGroup, D_sigma: Pairs, omega_sigma,
                           options: Optional[PrecisionOptions] = None) -> PrecisionOptimization:
    return _optimize(group, D_sigma, omega_sigma, options or PrecisionOptions(), fixed_dictionary=False)


def optimize_precision_fixed_dict(group: SeriesGroup, D_sigma: Pairs, omega_sigma,
                                  options: Optional[PrecisionOptions] = None) -> PrecisionOptimization:
    return _optimize(group, D_sigma, omega_sigma, options or PrecisionOptions(), fixed_dictionary=True)
