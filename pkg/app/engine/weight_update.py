"""Online weight updaters.

- ALD-KRLS: exact (optionally ridge-regularized) least squares over every
  sample seen, in dictionary coordinates.
- Multi-innovation RLS over the latest ``p`` innovations with forgetting.
- Recurrent gradient with a depth-1 feedback term.
- Plain exponentially weighted linear RLS for cascade stages.
"""
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.errors import NumericError, UsageError
from app.engine.dictionary import AldResult, Dictionary
from app.engine.utils import spd_solve, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_REGULARIZER = 1e-6
DEFAULT_DELTA = 1e-3
DEFAULT_LAMBDA_SCALE = 0.01


def predict_linear(weights: np.ndarray, kvec: np.ndarray) -> float:
    if weights.size == 0:
        return 0.0
    return float(kvec @ weights)


def _grow_matrix(matrix: np.ndarray, m: int, diagonal: float) -> np.ndarray:
    old = matrix.shape[0]
    grown = np.zeros((m, m))
    grown[:old, :old] = matrix
    idx = np.arange(old, m)
    grown[idx, idx] = diagonal
    return grown


def _grow_vector(vector: np.ndarray, m: int) -> np.ndarray:
    grown = np.zeros(m)
    grown[: vector.size] = vector
    return grown


# ---------------------------------------------------------------- KRLS

@dataclass(frozen=True, eq=False)
class KrlsState:
    alpha: np.ndarray
    gram_inverse: np.ndarray
    ata_inverse: np.ndarray
    regularizer: float = DEFAULT_REGULARIZER
    ata: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    aty: np.ndarray = field(default_factory=lambda: np.zeros(0))
    samples: int = 0

    @property
    def size(self) -> int:
        return self.alpha.size


def krls_init(regularizer: float = DEFAULT_REGULARIZER) -> KrlsState:
    if regularizer < 0:
        raise UsageError("regularizer must be non-negative")
    empty = np.zeros((0, 0))
    return KrlsState(
        alpha=np.zeros(0), gram_inverse=empty, ata_inverse=empty, regularizer=float(regularizer)
    )


def krls_attach(dictionary: Dictionary, regularizer: float = DEFAULT_REGULARIZER,
                delta: float = DEFAULT_DELTA) -> KrlsState:
    """KRLS state for a dictionary fixed before any sample is seen.

    No coefficient rows exist yet, so ``A^T A`` starts from the prior
    ``delta * I``.
    """
    m = dictionary.size
    return KrlsState(
        alpha=np.zeros(m),
        gram_inverse=dictionary.gram_inverse,
        ata_inverse=np.eye(m) / delta,
        regularizer=float(regularizer),
        ata=np.eye(m) * delta,
        aty=np.zeros(m),
    )


def _krls_solve(state: KrlsState, gram: np.ndarray, gram_inverse: np.ndarray,
                ata: np.ndarray, ata_inverse: np.ndarray, aty: np.ndarray) -> np.ndarray:
    if state.regularizer == 0.0:
        return gram_inverse @ (ata_inverse @ aty)
    lhs = symmetrize(gram @ ata @ gram) + state.regularizer * np.eye(gram.shape[0])
    return spd_solve(lhs, gram @ aty, what="KRLS normal equations", step=state.samples)


def krls_step(
    state: KrlsState,
    dictionary: Dictionary,
    x,
    y: float,
    admitted: bool,
    ald: Optional[AldResult] = None,
) -> KrlsState:
    """One KRLS update.

    ``dictionary`` is the dictionary after the admission decision. A
    non-admitted sample enters the regression through its coefficient row
    ``ald.alpha`` (ALD projection or quantization unit row); an admitted
    sample through the unit row of the new node.
    """
    m = dictionary.size
    if admitted:
        if m != state.size + 1:
            raise UsageError(f"admitted sample expects dictionary size {state.size + 1}, got {m}")
        ata = _grow_matrix(state.ata, m, 1.0)
        ata_inverse = _grow_matrix(state.ata_inverse, m, 1.0)
        aty = _grow_vector(state.aty, m)
        aty[-1] += y
    else:
        if ald is None or ald.alpha.size != m or m != state.size:
            raise UsageError("non-admitted sample needs a coefficient row matching the dictionary")
        a = ald.alpha
        ata = state.ata + np.outer(a, a)
        pa = state.ata_inverse @ a
        ata_inverse = symmetrize(state.ata_inverse - np.outer(pa, pa) / (1.0 + float(a @ pa)))
        aty = state.aty + a * y
    alpha = _krls_solve(state, dictionary.gram, dictionary.gram_inverse, ata, ata_inverse, aty)
    return replace(
        state,
        alpha=alpha,
        gram_inverse=dictionary.gram_inverse,
        ata=ata,
        ata_inverse=ata_inverse,
        aty=aty,
        samples=state.samples + 1,
    )


# ---------------------------------------------------------------- MRLS

@dataclass(frozen=True, eq=False)
class MrlsState:
    alpha: np.ndarray
    P: np.ndarray
    beta: float = 1.0
    p: int = 1
    window: Tuple[Tuple[np.ndarray, float], ...] = ()
    delta: float = DEFAULT_DELTA

    @property
    def size(self) -> int:
        return self.alpha.size


def mrls_init(m: int = 0, beta: float = 1.0, p: int = 1, delta: float = DEFAULT_DELTA) -> MrlsState:
    if not 0.0 < beta <= 1.0:
        raise UsageError("beta must lie in (0, 1]")
    if p < 1:
        raise UsageError("innovation window p must be at least 1")
    if delta <= 0:
        raise UsageError("delta must be positive")
    return MrlsState(alpha=np.zeros(m), P=np.eye(m) / delta, beta=float(beta), p=int(p), delta=float(delta))


def mrls_step(state: MrlsState, kvec, y: float) -> Tuple[MrlsState, float]:
    """Multi-innovation RLS step.

    ``Psi = P K^T (beta I + K P K^T)^-1``, ``P <- (P - Psi K P) / beta`` and
    ``alpha <- alpha + Psi e`` where ``K`` stacks the latest ``p`` kernel
    vectors and ``e`` their a-priori errors. Raises NumericError, leaving the
    caller's state untouched, when the innovation matrix is singular.
    """
    k = np.asarray(kvec, dtype=float).reshape(-1)
    if k.size != state.size:
        raise UsageError(f"kernel vector length {k.size} does not match weights {state.size}")
    error = float(y - k @ state.alpha)
    window: Deque = deque(state.window, maxlen=state.p)
    window.append((k, float(y)))
    K = np.vstack([row for row, _ in window])
    targets = np.array([target for _, target in window])
    e_p = targets - K @ state.alpha

    PK = state.P @ K.T
    S = symmetrize(state.beta * np.eye(K.shape[0]) + K @ PK)
    try:
        factor = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError("innovation matrix is singular") from exc
    psi = linalg.cho_solve(factor, PK.T).T
    P = symmetrize((state.P - psi @ K @ state.P) / state.beta)
    alpha = state.alpha + psi @ e_p
    return replace(state, alpha=alpha, P=P, window=tuple(window)), error


def mrls_resize(state: MrlsState, m: int, window_kvecs: Optional[Sequence[np.ndarray]] = None) -> MrlsState:
    """Grow to ``m`` weights; new weights start at 0 and new P entries at ``1/delta``."""
    if m < state.size:
        raise UsageError("MRLS state cannot shrink")
    window = _rebuild_window(state.window, m, window_kvecs)
    return replace(
        state,
        alpha=_grow_vector(state.alpha, m),
        P=_grow_matrix(state.P, m, 1.0 / state.delta),
        window=window,
    )


def mrls_reset_slot(state: MrlsState, index: int, window_kvecs: Optional[Sequence[np.ndarray]] = None) -> MrlsState:
    """Forget everything learned for weight ``index`` after its node was replaced."""
    alpha = state.alpha.copy()
    alpha[index] = 0.0
    P = state.P.copy()
    P[index, :] = 0.0
    P[:, index] = 0.0
    P[index, index] = 1.0 / state.delta
    return replace(state, alpha=alpha, P=P, window=_rebuild_window(state.window, state.size, window_kvecs))


def _rebuild_window(window, m: int, window_kvecs) -> tuple:
    if window_kvecs is not None:
        if len(window_kvecs) != len(window):
            raise UsageError("window kernel vectors must match the innovation window")
        return tuple((np.asarray(k, dtype=float), y) for k, (_, y) in zip(window_kvecs, window))
    return tuple((_grow_vector(k, m), y) for k, y in window)


# ---------------------------------------------------------- recurrent

@dataclass(frozen=True, eq=False)
class RecurrentGradState:
    alpha: np.ndarray
    eta: float
    lambda_rec: np.ndarray
    feedback_lags: Tuple[int, ...] = ()
    lambda_scale: float = DEFAULT_LAMBDA_SCALE
    prev_kvec: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.alpha.size


def recurrent_init(
    m: int = 0,
    eta: float = 0.1,
    lambda_scale: float = DEFAULT_LAMBDA_SCALE,
    feedback_lags: Sequence[int] = (),
) -> RecurrentGradState:
    if eta <= 0:
        raise UsageError("learning rate eta must be positive")
    return RecurrentGradState(
        alpha=np.zeros(m),
        eta=float(eta),
        lambda_rec=np.eye(m) * lambda_scale,
        feedback_lags=tuple(int(lag) for lag in feedback_lags),
        lambda_scale=float(lambda_scale),
    )


def recurrent_jacobian(state: RecurrentGradState, dictionary: Dictionary, x, kvec: np.ndarray) -> np.ndarray:
    """``d kvec / d alpha^T`` through the most recent fed-back output only.

    The fed-back component ``x[l]`` is last step's prediction
    ``prev_kvec^T alpha``, so ``d x[l] / d alpha = prev_kvec``.
    """
    m = state.size
    if not state.feedback_lags or state.prev_kvec is None or m == 0:
        return np.zeros((m, m))
    lag = state.feedback_lags[0]
    x = np.asarray(x, dtype=float).reshape(-1)
    if not 0 <= lag < x.size:
        raise UsageError(f"feedback lag {lag} is not an index of the input")
    precision = dictionary.kernel.precision
    diffs = x - dictionary.centers
    dk_dx = -(2.0 / dictionary.kernel.h0) * kvec * (diffs @ precision[:, lag])
    return np.outer(dk_dx, state.prev_kvec)


def recurrent_gradient(state: RecurrentGradState, dictionary: Dictionary, x, y: float) -> Tuple[np.ndarray, float, np.ndarray]:
    kvec = dictionary.kernel_vector(x)
    if kvec.size != state.size:
        raise UsageError(f"dictionary size {kvec.size} does not match weights {state.size}")
    error = float(y - kvec @ state.alpha)
    partial = -2.0 * error * kvec
    recurrent = (-2.0 * error * state.alpha) @ recurrent_jacobian(state, dictionary, x, kvec) @ state.lambda_rec
    return partial + recurrent, error, kvec


def recurrent_grad_step(state: RecurrentGradState, dictionary: Dictionary, x, y: float) -> RecurrentGradState:
    gradient, _, kvec = recurrent_gradient(state, dictionary, x, y)
    return replace(state, alpha=state.alpha - state.eta * gradient, prev_kvec=kvec)


def recurrent_resize(state: RecurrentGradState, m: int) -> RecurrentGradState:
    if m < state.size:
        raise UsageError("recurrent state cannot shrink")
    prev = None if state.prev_kvec is None else _grow_vector(state.prev_kvec, m)
    return replace(
        state,
        alpha=_grow_vector(state.alpha, m),
        lambda_rec=_grow_matrix(state.lambda_rec, m, state.lambda_scale),
        prev_kvec=prev,
    )


def recurrent_reset_slot(state: RecurrentGradState, index: int) -> RecurrentGradState:
    alpha = state.alpha.copy()
    alpha[index] = 0.0
    return replace(state, alpha=alpha)


# ---------------------------------------------------------- linear RLS

@dataclass(frozen=True, eq=False)
class LinearRlsState:
    theta: np.ndarray
    P: np.ndarray
    beta2: float = 1.0


def linear_rls_init(p_r: int, beta2: float = 1.0, delta: float = DEFAULT_DELTA) -> LinearRlsState:
    if p_r < 1:
        raise UsageError("p_r must be at least 1")
    if not 0.0 < beta2 <= 1.0:
        raise UsageError("beta2 must lie in (0, 1]")
    return LinearRlsState(theta=np.zeros(p_r), P=np.eye(p_r) / delta, beta2=float(beta2))


def linear_rls_step(state: LinearRlsState, x, y: float) -> Tuple[LinearRlsState, float]:
    u = np.asarray(x, dtype=float).reshape(-1)
    if u.size != state.theta.size:
        raise UsageError(f"input length {u.size} does not match p_r {state.theta.size}")
    error = float(y - u @ state.theta)
    Pu = state.P @ u
    gain = Pu / (state.beta2 + float(u @ Pu))
    theta = state.theta + gain * error
    P = symmetrize((state.P - np.outer(gain, Pu)) / state.beta2)
    return replace(state, theta=theta, P=P), error


# -------------------------------------------------------------- oracle

def batch_ls_oracle(A, y, lam: float = 0.0) -> np.ndarray:
    """``argmin ||y - A w||^2 + lam ||w||^2`` by a dense solve."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n = A.shape[1]
    if lam == 0.0 and np.linalg.matrix_rank(A) < n:
        raise NumericError("design matrix is rank deficient and lam is 0")
    lhs = A.T @ A + lam * np.eye(n)
    return linalg.solve(lhs, A.T @ y, assume_a="pos")
