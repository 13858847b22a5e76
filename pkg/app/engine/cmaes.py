"""Pure CMA-ES: sampling, ranking, weighted recombination, rank-one plus
rank-mu covariance adaptation and cumulative step-size control.

Only positive recombination weights are used. Every generation draws from
``numpy.random.default_rng([seed, generation])`` so a run is reproducible
whether candidates are evaluated serially or on a thread pool.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.errors import OptimizationError, UsageError
from app.engine.utils import symmetrize

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True, eq=False)
class CmaesParams:
    dim: int
    lambda_c: int
    mu_c: int
    w_m: np.ndarray
    w_c: np.ndarray
    mu_eff: float
    c_m: float
    c_c: float
    c_1: float
    c_mu: float
    c_sigma: float
    d_sigma: float
    chi_n: float

    @classmethod
    def default(cls, n: int, lambda_c: Optional[int] = None) -> "CmaesParams":
        if n < 1:
            raise UsageError("CMA-ES dimension must be at least 1")
        lam = 4 + int(math.floor(3 * math.log(n))) if lambda_c is None else int(lambda_c)
        if lam < 2:
            raise UsageError("population size must be at least 2")
        mu = lam // 2
        raw = np.array([math.log(mu + 0.5) - math.log(i + 1) for i in range(mu)])
        weights = raw / raw.sum()
        mu_eff = float(weights.sum() ** 2 / (weights ** 2).sum())
        c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
        c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
        c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
        c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
        d_sigma = 1 + c_sigma + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1)
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))
        return cls(
            dim=n, lambda_c=lam, mu_c=mu, w_m=weights, w_c=weights.copy(), mu_eff=mu_eff,
            c_m=1.0, c_c=c_c, c_1=c_1, c_mu=c_mu, c_sigma=c_sigma, d_sigma=d_sigma, chi_n=chi_n,
        )


@dataclass(frozen=True, eq=False)
class CmaesState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_c1: np.ndarray
    p_sigma_c: np.ndarray
    generation: int = 0
    seed: int = 0
    evaluations: int = 0

    @classmethod
    def initial(cls, x0, sigma0: float, seed: int = 0) -> "CmaesState":
        mean = np.asarray(x0, dtype=float).reshape(-1)
        if not sigma0 > 0:
            raise UsageError("sigma0 must be positive")
        n = mean.size
        return cls(mean=mean.copy(), sigma=float(sigma0), C=np.eye(n),
                   p_c1=np.zeros(n), p_sigma_c=np.zeros(n), seed=int(seed))

    def eigensystem(self) -> Tuple[np.ndarray, np.ndarray]:
        """``(B, D)`` with ``C = B diag(D^2) B^T``."""
        values, vectors = linalg.eigh(self.C)
        return vectors, np.sqrt(np.maximum(values, 0.0))


@dataclass
class Termination:
    max_evaluations: Optional[int] = None
    max_generations: Optional[int] = None
    f_target: Optional[float] = None
    f_tolerance: Optional[float] = 1e-12
    sigma_floor: Optional[float] = 1e-11
    stagnation_generations: Optional[int] = None
    stagnation_tolerance: float = 1e-4


@dataclass
class OptimizationResult:
    best_x: np.ndarray
    best_f: float
    history: List[float] = field(default_factory=list)
    selected: List[List[int]] = field(default_factory=list)
    means: List[np.ndarray] = field(default_factory=list)
    evaluations: int = 0
    generations: int = 0
    stop_reason: str = ""
    final_state: Optional[CmaesState] = None


def sample_population(state: CmaesState, params: CmaesParams) -> List[np.ndarray]:
    rng = np.random.default_rng([state.seed, state.generation])
    B, D = state.eigensystem()
    z = rng.standard_normal((params.lambda_c, params.dim))
    steps = (z * D) @ B.T
    return [state.mean + state.sigma * row for row in steps]


def rank_and_select(values: Sequence[float]) -> np.ndarray:
    """Indices in ascending objective order; non-finite values rank last."""
    vals = np.asarray(values, dtype=float)
    finite = np.isfinite(vals)
    if vals.size == 0 or not finite.any():
        raise OptimizationError("every candidate of the generation failed to evaluate")
    return np.argsort(np.where(finite, vals, np.inf), kind="stable")


def update_mean(state: CmaesState, selected, params: CmaesParams) -> np.ndarray:
    """``selected`` holds the best ``mu_c`` vectors in rank order."""
    chosen = np.atleast_2d(np.asarray(selected, dtype=float))[: params.mu_c]
    weights = params.w_m[: chosen.shape[0]]
    return state.mean + params.c_m * (weights @ (chosen - state.mean))


def update_paths(state: CmaesState, new_mean: np.ndarray, params: CmaesParams) -> CmaesState:
    """Cumulate both evolution paths from the mean shift of this generation."""
    n = params.dim
    y = (new_mean - state.mean) / state.sigma
    B, D = state.eigensystem()
    inv_sqrt = (B / np.where(D > 0, D, np.inf)) @ B.T
    p_sigma = (1 - params.c_sigma) * state.p_sigma_c + math.sqrt(
        params.c_sigma * (2 - params.c_sigma) * params.mu_eff
    ) * (inv_sqrt @ y)
    correction = math.sqrt(1 - (1 - params.c_sigma) ** (2 * (state.generation + 1)))
    hsig = np.linalg.norm(p_sigma) / correction / params.chi_n < 1.4 + 2 / (n + 1)
    p_c = (1 - params.c_c) * state.p_c1
    if hsig:
        p_c = p_c + math.sqrt(params.c_c * (2 - params.c_c) * params.mu_eff) * y
    return replace(state, p_sigma_c=p_sigma, p_c1=p_c)


def update_covariance(state: CmaesState, population, selected, params: CmaesParams) -> np.ndarray:
    """``selected`` are indices into ``population`` in rank order; the state
    still carries the pre-update mean and sigma and the updated paths."""
    chosen = np.asarray([population[i] for i in list(selected)[: params.mu_c]], dtype=float)
    weights = params.w_c[: chosen.shape[0]]
    steps = (chosen - state.mean) / state.sigma
    rank_mu = (steps.T * weights) @ steps if chosen.size else np.zeros_like(state.C)
    C = (1 - params.c_1 - params.c_mu * weights.sum()) * state.C \
        + params.c_1 * np.outer(state.p_c1, state.p_c1) \
        + params.c_mu * rank_mu
    return symmetrize(C)


def update_step_size(state: CmaesState, params: CmaesParams) -> float:
    ratio = np.linalg.norm(state.p_sigma_c) / params.chi_n
    return float(state.sigma * math.exp((params.c_sigma / params.d_sigma) * (ratio - 1)))


def tell(state: CmaesState, population, values, params: CmaesParams) -> Tuple[CmaesState, np.ndarray]:
    order = rank_and_select(values)
    selected = order[: params.mu_c]
    new_mean = update_mean(state, [population[i] for i in selected], params)
    state = update_paths(state, new_mean, params)
    C = update_covariance(state, population, selected, params)
    sigma = update_step_size(state, params)
    return replace(
        state,
        mean=new_mean,
        C=C,
        sigma=sigma,
        generation=state.generation + 1,
        evaluations=state.evaluations + len(population),
    ), order


def _safe_call(objective: Objective, x: np.ndarray) -> float:
    try:
        value = float(objective(x))
    except Exception as exc:  # a failing candidate ranks last
        logger.debug("candidate evaluation failed: %s", exc)
        return math.inf
    return value if math.isfinite(value) else math.inf


def evaluate_population(objective: Objective, population, workers: int = 1) -> List[float]:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda x: _safe_call(objective, x), population))
    return [_safe_call(objective, x) for x in population]


def _should_stop(state: CmaesState, result: OptimizationResult, values, termination: Termination) -> str:
    if termination.max_evaluations is not None and state.evaluations >= termination.max_evaluations:
        return "max_evaluations"
    if termination.max_generations is not None and state.generation >= termination.max_generations:
        return "max_generations"
    if termination.f_target is not None and result.best_f <= termination.f_target:
        return "f_target"
    finite = [v for v in values if math.isfinite(v)]
    if termination.f_tolerance is not None and len(finite) > 1 and max(finite) - min(finite) < termination.f_tolerance:
        return "f_tolerance"
    if termination.sigma_floor is not None:
        spread = state.sigma * math.sqrt(max(float(np.max(np.diag(state.C))), 0.0))
        if spread < termination.sigma_floor:
            return "sigma_floor"
    window = termination.stagnation_generations
    if window and len(result.history) > window:
        past = min(result.history[:-window])
        now = min(result.history)
        if past - now <= termination.stagnation_tolerance * max(abs(past), 1e-300):
            return "stagnation"
    return ""


def optimize(
    objective: Objective,
    x0,
    sigma0: float,
    params: Optional[CmaesParams] = None,
    termination: Optional[Termination] = None,
    seed: int = 0,
    workers: int = 1,
) -> OptimizationResult:
    state = CmaesState.initial(x0, sigma0, seed)
    params = params or CmaesParams.default(state.mean.size)
    termination = termination or Termination(max_evaluations=1000 * params.dim ** 2)
    if termination.max_evaluations is None and termination.max_generations is None:
        raise UsageError("termination needs max_evaluations or max_generations")

    result = OptimizationResult(best_x=state.mean.copy(), best_f=math.inf)
    if termination.max_generations == 0 or termination.max_evaluations == 0:
        result.stop_reason = "max_generations" if termination.max_generations == 0 else "max_evaluations"
        result.final_state = state
        return result

    while True:
        population = sample_population(state, params)
        values = evaluate_population(objective, population, workers)
        try:
            state, order = tell(state, population, values, params)
        except OptimizationError as exc:
            exc.step = state.generation
            raise
        best = int(order[0])
        if values[best] < result.best_f:
            result.best_f = values[best]
            result.best_x = population[best].copy()
        result.history.append(values[best])
        result.selected.append([int(i) for i in order[: params.mu_c]])
        result.means.append(state.mean.copy())
        reason = _should_stop(state, result, values, termination)
        if reason:
            result.stop_reason = reason
            break

    result.evaluations = state.evaluations
    result.generations = state.generation
    result.final_state = state
    logger.debug("CMA-ES stopped after %d generations (%s), best f=%.3e",
                 state.generation, result.stop_reason, result.best_f)
    return result
