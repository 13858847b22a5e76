"""Online kernel-dictionary selection.

Admission criteria: approximate linear dependency (ALD), Euclidean
quantization distance, loss-change significance, orthogonal forward
selection (OFS) over a batch of candidates, and fixed-size replacement.
A ``Dictionary`` is a value: every operation returns a new one.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist

from app.core.config import settings
from app.core.errors import NumericError, UsageError
from app.engine.kernel_core import KernelConfig, KernelNode, kernel_vector
from app.engine.utils import spd_inverse, symmetrize

logger = logging.getLogger(__name__)

OFS_ZERO_NORM = 1e-12
MEDIAN_SAMPLE_LIMIT = 500


@dataclass(frozen=True, eq=False)
class Dictionary:
    kernel: KernelConfig
    centers: np.ndarray
    gram: np.ndarray
    gram_inverse: np.ndarray
    max_size: Optional[int] = None

    @classmethod
    def empty(cls, kernel: KernelConfig, max_size: Optional[int] = None) -> "Dictionary":
        if max_size is not None and max_size < 1:
            raise UsageError("max_size must be at least 1")
        return cls(
            kernel=kernel,
            centers=np.zeros((0, kernel.dim)),
            gram=np.zeros((0, 0)),
            gram_inverse=np.zeros((0, 0)),
            max_size=max_size,
        )

    @classmethod
    def from_centers(cls, kernel: KernelConfig, centers, max_size: Optional[int] = None) -> "Dictionary":
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        gram = build_gram(kernel, centers)
        return cls(kernel, centers, gram, spd_inverse(gram, what="gram"), max_size)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def is_full(self) -> bool:
        return self.max_size is not None and self.size >= self.max_size

    @property
    def nodes(self) -> Tuple[KernelNode, ...]:
        return tuple(self.kernel.node(center) for center in self.centers)

    def kernel_vector(self, x) -> np.ndarray:
        return kernel_vector(self.centers, self.kernel.precision, self.kernel.h0, x)

    def with_kernel(self, kernel: KernelConfig) -> "Dictionary":
        """Same centers under another precision; the Gram matrix is rebuilt."""
        if self.size == 0:
            return Dictionary.empty(kernel, self.max_size)
        return Dictionary.from_centers(kernel, self.centers, self.max_size)


@dataclass(frozen=True, eq=False)
class AldResult:
    delta1: float
    alpha: np.ndarray
    kvec: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True, eq=False)
class OfsSelection:
    selected_indices: list[int]
    err_ratios: list[float]
    orthogonal_basis: list[np.ndarray]
    g: np.ndarray
    A_upper: np.ndarray


def build_gram(kernel: KernelConfig, centers: np.ndarray) -> np.ndarray:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    gram = np.vstack([kernel_vector(centers, kernel.precision, kernel.h0, c) for c in centers])
    gram = symmetrize(gram)
    np.fill_diagonal(gram, 1.0)
    return gram


def ald_test(dictionary: Dictionary, x, kvec: Optional[np.ndarray] = None) -> AldResult:
    if dictionary.size == 0:
        raise UsageError(
            "ALD test needs a non-empty dictionary",
            resolution="Admit the first sample unconditionally",
        )
    k = dictionary.kernel_vector(x) if kvec is None else kvec
    alpha = dictionary.gram_inverse @ k
    delta1 = max(1.0 - float(k @ alpha), 0.0)
    return AldResult(delta1=delta1, alpha=alpha, kvec=k)


def ald_admit(
    dictionary: Dictionary, x, ald: Optional[AldResult] = None, pivot_floor: Optional[float] = None
) -> Dictionary:
    """Append ``x`` as a node and grow the inverse Gram matrix by its Schur complement."""
    floor = settings.PIVOT_FLOOR if pivot_floor is None else pivot_floor
    center = np.asarray(x, dtype=float).reshape(1, -1)
    if dictionary.is_full:
        raise UsageError(f"dictionary is full ({dictionary.max_size} nodes)")
    if dictionary.size == 0:
        return Dictionary(
            kernel=dictionary.kernel,
            centers=center.copy(),
            gram=np.ones((1, 1)),
            gram_inverse=np.ones((1, 1)),
            max_size=dictionary.max_size,
        )
    if ald is None:
        ald = ald_test(dictionary, x)
    if ald.delta1 <= floor:
        raise NumericError(
            f"sample is numerically dependent on the dictionary (delta1={ald.delta1:.3e})",
            resolution="Raise the ALD threshold above the pivot floor",
        )
    k, a, delta = ald.kvec, ald.alpha, ald.delta1
    m = dictionary.size
    gram = np.empty((m + 1, m + 1))
    gram[:m, :m] = dictionary.gram
    gram[:m, m] = k
    gram[m, :m] = k
    gram[m, m] = 1.0

    inverse = np.empty((m + 1, m + 1))
    inverse[:m, :m] = dictionary.gram_inverse + np.outer(a, a) / delta
    inverse[:m, m] = -a / delta
    inverse[m, :m] = -a / delta
    inverse[m, m] = 1.0 / delta
    return Dictionary(
        kernel=dictionary.kernel,
        centers=np.vstack([dictionary.centers, center]),
        gram=gram,
        gram_inverse=symmetrize(inverse),
        max_size=dictionary.max_size,
    )


def distance_test(dictionary: Dictionary, x) -> Tuple[int, float]:
    if dictionary.size == 0:
        raise UsageError("distance test needs a non-empty dictionary")
    sq = np.sum((dictionary.centers - np.asarray(x, dtype=float).reshape(1, -1)) ** 2, axis=1)
    j_star = int(np.argmin(sq))
    return j_star, float(sq[j_star])


def quantized_alpha(m: int, j_star: int) -> np.ndarray:
    """Coefficient row of a sample quantized onto node ``j_star``."""
    alpha = np.zeros(m)
    alpha[j_star] = 1.0
    return alpha


def loss_change_hessian(dictionary: Dictionary, regularizer: float) -> np.ndarray:
    return dictionary.gram.T @ dictionary.gram + regularizer * np.eye(dictionary.size)


def loss_change_test(delta_alpha, hessian) -> float:
    d = np.asarray(delta_alpha, dtype=float).reshape(-1)
    h = np.atleast_2d(np.asarray(hessian, dtype=float))
    if h.shape != (d.size, d.size):
        raise UsageError(f"hessian shape {h.shape} does not match delta_alpha length {d.size}")
    if d.size and linalg.eigvalsh(symmetrize(h))[0] < -1e-8:
        raise NumericError("loss-change hessian is not positive semi-definite")
    return 0.5 * float(d @ h @ d)


def ofs_select(
    candidates: Sequence,
    y,
    kernel: KernelConfig,
    budget: Optional[int] = None,
    threshold: Optional[float] = None,
) -> OfsSelection:
    """Greedy orthogonal forward selection by error reduction ratio.

    Column ``j`` of the regression matrix is the kernel of candidate ``j``
    evaluated at every candidate. Each step orthogonalizes the remaining
    columns against the picked ones (modified Gram-Schmidt) and picks the
    column with the largest ``(w^T y)^2 / ((w^T w)(y^T y))``.
    """
    points = np.atleast_2d(np.asarray(candidates, dtype=float))
    target = np.asarray(y, dtype=float).reshape(-1)
    n_t = points.shape[0]
    if len(candidates) == 0 or target.size != n_t:
        raise UsageError("ofs_select needs as many targets as candidates (at least one)")
    yty = float(target @ target)
    if yty <= 0.0:
        raise UsageError("ofs_select needs a non-zero target vector")
    limit = n_t if budget is None else min(int(budget), n_t)

    regression = build_gram(kernel, points)
    residual = regression.copy()
    available = np.ones(n_t, dtype=bool)
    selected: list[int] = []
    ratios: list[float] = []
    basis: list[np.ndarray] = []
    g: list[float] = []

    while len(selected) < limit:
        norms = np.einsum("ij,ij->j", residual, residual)
        available &= norms >= OFS_ZERO_NORM
        if not available.any():
            break
        proj = residual.T @ target
        err = np.where(available, proj ** 2 / (np.where(available, norms, 1.0) * yty), -np.inf)
        j = int(np.argmax(err))
        if threshold is not None and err[j] < threshold:
            break
        w = residual[:, j].copy()
        wtw = float(w @ w)
        selected.append(j)
        ratios.append(float(err[j]))
        basis.append(w)
        g.append(float(w @ target) / wtw)
        available[j] = False
        residual -= np.outer(w, (w @ residual) / wtw)

    size = len(selected)
    a_upper = np.eye(size)
    for row, w in enumerate(basis):
        wtw = float(w @ w)
        for col in range(row + 1, size):
            a_upper[row, col] = float(w @ regression[:, selected[col]]) / wtw
    logger.debug("OFS picked %d of %d candidates, total ratio %.4f", size, n_t, sum(ratios))
    return OfsSelection(
        selected_indices=selected,
        err_ratios=ratios,
        orthogonal_basis=basis,
        g=np.asarray(g),
        A_upper=a_upper,
    )


def replace_node(dictionary: Dictionary, weights, x_new) -> Tuple[Dictionary, int]:
    """Swap the node with the smallest ``|w|`` (lowest index on ties) for ``x_new``.

    Raises NumericError when ``x_new`` coincides with one of the kept nodes.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != dictionary.size or dictionary.size == 0:
        raise UsageError("weights must match a non-empty dictionary")
    index = int(np.argmin(np.abs(w)))
    centers = dictionary.centers.copy()
    centers[index] = np.asarray(x_new, dtype=float).reshape(-1)
    k = kernel_vector(centers, dictionary.kernel.precision, dictionary.kernel.h0, centers[index])
    others = np.delete(k, index)
    if others.size and float(np.max(others)) >= 1.0 - settings.PIVOT_FLOOR:
        duplicate = int(np.argmax(others))
        duplicate += duplicate >= index
        raise NumericError(f"replacement input duplicates node {duplicate}")
    gram = dictionary.gram.copy()
    gram[index, :] = k
    gram[:, index] = k
    gram[index, index] = 1.0
    replaced = Dictionary(
        kernel=dictionary.kernel,
        centers=centers,
        gram=gram,
        gram_inverse=spd_inverse(gram, what="gram after replacement"),
        max_size=dictionary.max_size,
    )
    return replaced, index


def median_sq_distance(inputs) -> float:
    points = np.atleast_2d(np.asarray(inputs, dtype=float))[:MEDIAN_SAMPLE_LIMIT]
    if points.shape[0] < 2:
        return 0.0
    return float(np.median(pdist(points))) ** 2


def default_distance_threshold(inputs) -> float:
    return 0.1 * median_sq_distance(inputs)
