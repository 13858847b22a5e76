import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import NumericError, UsageError
from app.engine import weight_update as wu
from app.engine.dictionary import (
    AldResult,
    Dictionary,
    ald_admit,
    ald_test,
    distance_test,
    loss_change_hessian,
    loss_change_test,
    ofs_select,
    quantized_alpha,
    replace_node,
)
from app.engine.kernel_core import KernelConfig

logger = logging.getLogger(__name__)

SPARSIFIERS = ("ald", "distance", "loss_change", "ofs", "fixed")
KERNEL_UPDATERS = ("krls", "mrls", "recurrent_grad")
STAGE_UPDATERS = ("linear_rls", "last_error")
UPDATERS = KERNEL_UPDATERS + STAGE_UPDATERS


@dataclass(frozen=True)
class GroupSettings:
    sparsifier: str = "ald"
    updater: str = "krls"
    nu1: float = 0.01
    nu2: Optional[float] = None
    nu3: float = 1e-4
    regularizer: float = wu.DEFAULT_REGULARIZER
    beta: float = 1.0
    innovations: int = 1
    learning_rate: float = 0.1
    lambda_scale: float = wu.DEFAULT_LAMBDA_SCALE
    feedback_lags: Tuple[int, ...] = ()
    max_size: Optional[int] = None
    replace_when_full: bool = False
    ofs_candidates: int = 200
    ofs_threshold: Optional[float] = None
    delta: float = wu.DEFAULT_DELTA
    p_r: int = 1
    beta2: float = 1.0

    def __post_init__(self):
        if self.sparsifier not in SPARSIFIERS:
            raise UsageError(f"unknown sparsifier '{self.sparsifier}'")
        if self.updater not in UPDATERS:
            raise UsageError(f"unknown updater '{self.updater}'")
        if self.replace_when_full and self.updater == "krls":
            raise UsageError("node replacement needs the mrls or recurrent_grad updater")
        if self.sparsifier == "distance" and self.nu2 is None:
            raise UsageError("the distance sparsifier needs nu2")

    @property
    def is_kernel(self) -> bool:
        return self.updater in KERNEL_UPDATERS


def last_error_compensator(error_history: Sequence[float]) -> float:
    return float(error_history[-1]) if len(error_history) else 0.0


class SeriesGroup:
    """Kernel nodes selected from one series, sharing one precision and one weight vector.

    Also hosts the two non-kernel stages a cascade may use: linear RLS over
    an error-lag vector and the last-error compensator.
    """

    def __init__(
        self,
        group_settings: GroupSettings,
        kernel: Optional[KernelConfig] = None,
        dictionary: Optional[Dictionary] = None,
        input_dim: Optional[int] = None,
    ):
        self.settings = group_settings
        self.kernel = kernel
        self.steps = 0
        self.selection_runs = 0
        self.grow = dictionary is None and group_settings.sparsifier != "fixed"
        self._recent: Deque[np.ndarray] = deque(maxlen=group_settings.innovations)

        if group_settings.is_kernel:
            if kernel is None:
                raise UsageError(f"updater '{group_settings.updater}' needs a kernel configuration")
            self.dictionary = dictionary if dictionary is not None else Dictionary.empty(kernel, group_settings.max_size)
            if dictionary is None and group_settings.sparsifier in ("fixed", "ofs"):
                raise UsageError(f"sparsifier '{group_settings.sparsifier}' needs a dictionary chosen up front")
            self.state = self._fresh_state()
            self.selection_runs = 0 if dictionary is not None else 1
        else:
            self.dictionary = None
            if group_settings.updater == "linear_rls":
                self.state = wu.linear_rls_init(input_dim or group_settings.p_r, group_settings.beta2, group_settings.delta)
            else:
                self.state = None

    def _fresh_state(self):
        s = self.settings
        m = self.dictionary.size
        if s.updater == "krls":
            return wu.krls_init(s.regularizer) if m == 0 else wu.krls_attach(self.dictionary, s.regularizer, s.delta)
        if s.updater == "mrls":
            return wu.mrls_init(m, s.beta, s.innovations, s.delta)
        return wu.recurrent_init(m, s.learning_rate, s.lambda_scale, s.feedback_lags)

    def spawn(self, kernel: Optional[KernelConfig] = None, dictionary: Optional[Dictionary] = None) -> "SeriesGroup":
        """Untrained copy with the same settings, optionally another kernel or a fixed dictionary."""
        return SeriesGroup(self.settings, kernel or self.kernel, dictionary)

    @property
    def weights(self) -> np.ndarray:
        if self.settings.updater == "linear_rls":
            return self.state.theta
        if self.state is None:
            return np.zeros(0)
        return self.state.alpha

    @property
    def size(self) -> int:
        return 0 if self.dictionary is None else self.dictionary.size

    def predict(self, x) -> float:
        s = self.settings
        if s.updater == "last_error":
            return last_error_compensator(np.asarray(x, dtype=float).reshape(-1)[:1])
        if s.updater == "linear_rls":
            return float(np.asarray(x, dtype=float).reshape(-1) @ self.state.theta)
        if self.dictionary.size == 0:
            return 0.0
        return wu.predict_linear(self.state.alpha, self.dictionary.kernel_vector(x))

    def update(self, x, y: float) -> float:
        """Predict, then learn from ``(x, y)``; returns the a-priori error."""
        error = float(y - self.predict(x))
        s = self.settings
        if s.updater == "linear_rls":
            self.state, _ = wu.linear_rls_step(self.state, x, y)
        elif s.is_kernel:
            self._learn(np.asarray(x, dtype=float).reshape(-1), float(y))
        self.steps += 1
        return error

    def replay(self, pairs: Iterable[Tuple[np.ndarray, float]]) -> List[float]:
        return [self.update(x, y) for x, y in pairs]

    def freeze(self):
        self.grow = False

    # ---------------------------------------------------------------

    def _learn(self, x: np.ndarray, y: float):
        s = self.settings
        if self.dictionary.size == 0:
            if not self.grow:
                return
            self._admit(x, y, None)
            return

        ald = ald_test(self.dictionary, x)
        row = ald
        admit = False
        if self.grow:
            if s.sparsifier == "ald":
                admit = ald.delta1 > s.nu1
            elif s.sparsifier == "distance":
                j_star, delta2 = distance_test(self.dictionary, x)
                admit = delta2 > s.nu2
                if not admit:
                    row = AldResult(delta1=delta2, alpha=quantized_alpha(self.dictionary.size, j_star), kvec=ald.kvec)
            elif s.sparsifier == "loss_change":
                admit = self._loss_change_admits(x, y, ald)
            admit = admit and ald.delta1 > settings.PIVOT_FLOOR

        if admit and self.dictionary.is_full:
            if s.replace_when_full:
                self._replace(x, y)
                return
            admit = False
        if admit:
            self._admit(x, y, ald)
        else:
            self._update_weights(x, y, row)

    def _loss_change_admits(self, x: np.ndarray, y: float, ald: AldResult) -> bool:
        before = self.state.alpha
        after = self._weights_without_admission(x, y, ald)
        hessian = loss_change_hessian(self.dictionary, self.settings.regularizer)
        return loss_change_test(after - before, hessian) > self.settings.nu3

    def _weights_without_admission(self, x: np.ndarray, y: float, ald: AldResult) -> np.ndarray:
        s = self.settings
        if s.updater == "krls":
            return wu.krls_step(self.state, self.dictionary, x, y, False, ald).alpha
        if s.updater == "mrls":
            try:
                return wu.mrls_step(self.state, ald.kvec, y)[0].alpha
            except NumericError:
                return self.state.alpha
        return wu.recurrent_grad_step(self.state, self.dictionary, x, y).alpha

    def _window_kvecs(self) -> List[np.ndarray]:
        return [self.dictionary.kernel_vector(past) for past in self._recent]

    def _admit(self, x: np.ndarray, y: float, ald: Optional[AldResult]):
        s = self.settings
        try:
            self.dictionary = ald_admit(self.dictionary, x, ald)
        except NumericError as exc:
            logger.warning("admission skipped at step %d: %s", self.steps, exc.message)
            if ald is not None:
                self._update_weights(x, y, ald)
            return
        m = self.dictionary.size
        if s.updater == "krls":
            self.state = wu.krls_step(self.state, self.dictionary, x, y, True, ald)
            return
        if s.updater == "mrls":
            self.state = wu.mrls_resize(self.state, m, self._window_kvecs())
        else:
            self.state = wu.recurrent_resize(self.state, m)
        self._update_weights(x, y, None)

    def _replace(self, x: np.ndarray, y: float):
        try:
            self.dictionary, index = replace_node(self.dictionary, self.state.alpha, x)
        except NumericError as exc:
            logger.warning("replacement skipped at step %d: %s", self.steps, exc.message)
            self._update_weights(x, y, None)
            return
        logger.debug("node %d replaced at step %d", index, self.steps)
        if self.settings.updater == "mrls":
            self.state = wu.mrls_reset_slot(self.state, index, self._window_kvecs())
        else:
            self.state = wu.recurrent_reset_slot(self.state, index)
        self._update_weights(x, y, None)

    def _update_weights(self, x: np.ndarray, y: float, row: Optional[AldResult]):
        s = self.settings
        if s.updater == "krls":
            self.state = wu.krls_step(self.state, self.dictionary, x, y, False, row)
        elif s.updater == "mrls":
            kvec = self.dictionary.kernel_vector(x) if row is None else row.kvec
            try:
                self.state, _ = wu.mrls_step(self.state, kvec, y)
            except NumericError as exc:
                logger.warning("MRLS update skipped at step %d: %s", self.steps, exc.message)
                return
            # kept aligned with the innovation window
            self._recent.append(x)
        else:
            self.state = wu.recurrent_grad_step(self.state, self.dictionary, x, y)


def select_dictionary(
    group: SeriesGroup, pairs: Sequence[Tuple[np.ndarray, float]], kernel: Optional[KernelConfig] = None
) -> Dictionary:
    """Run the group's sparsifier over ``pairs`` and return the chosen dictionary.

    Growing sparsifiers replay a fresh copy (the admission rule may read the
    weights); OFS selects greedily over the last ``ofs_candidates`` pairs.
    """
    s = group.settings
    kernel = kernel or group.kernel
    if s.sparsifier == "ofs":
        tail = list(pairs)[-s.ofs_candidates:]
        xs = np.array([x for x, _ in tail])
        ys = np.array([y for _, y in tail])
        selection = ofs_select(xs, ys, kernel, budget=s.max_size, threshold=s.ofs_threshold)
        return Dictionary.from_centers(kernel, xs[selection.selected_indices], s.max_size)
    if s.sparsifier == "fixed":
        return group.dictionary.with_kernel(kernel)
    fresh = SeriesGroup(s, kernel)
    fresh.replay(pairs)
    return fresh.dictionary
