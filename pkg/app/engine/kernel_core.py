"""Gaussian kernels with a full symmetric precision matrix.

A kernel node evaluates ``exp(-(x - c)^T P (x - c) / h0)``. ``P`` is the
precision (inverse kernel covariance) and is kept exactly symmetric with
every eigenvalue at or above an eigenvalue floor.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from app.core.config import settings
from app.core.errors import NumericError, UsageError
from app.engine.utils import symmetrize


def _as_vector(x, name: str = "x") -> np.ndarray:
    vec = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise NumericError(f"{name} contains non-finite values")
    return vec


def project_to_floor(matrix: np.ndarray, eigen_floor: Optional[float] = None) -> np.ndarray:
    """Symmetrize and clamp eigenvalues at ``eigen_floor``.

    The matrix is only rebuilt from its eigenpairs when an eigenvalue is
    actually below the floor, so already valid inputs pass through unchanged.
    """
    floor = settings.EIGEN_FLOOR if eigen_floor is None else eigen_floor
    sym = symmetrize(np.asarray(matrix, dtype=float))
    if sym.size == 0:
        return sym
    if linalg.eigvalsh(sym)[0] >= floor:
        return sym
    values, vectors = linalg.eigh(sym)
    # margin keeps the rebuilt spectrum above the floor after rounding
    target = floor * (1.0 + 1e-6) + 64.0 * np.finfo(float).eps * float(np.max(np.abs(values)))
    rebuilt = (vectors * np.maximum(values, target)) @ vectors.T
    return symmetrize(rebuilt)


def isotropic_precision(p_x: int, scale: float) -> np.ndarray:
    if scale <= 0:
        raise UsageError("isotropic precision scale must be positive")
    return np.eye(p_x) * float(scale)


@dataclass(frozen=True, eq=False)
class KernelNode:
    center: np.ndarray
    precision: np.ndarray
    h0: float = 1.0
    eigen_floor: float = settings.EIGEN_FLOOR

    def __post_init__(self):
        center = _as_vector(self.center, "center")
        precision = np.asarray(self.precision, dtype=float)
        if precision.shape != (center.size, center.size):
            raise UsageError(
                f"precision shape {precision.shape} does not match center dimension {center.size}"
            )
        if not np.all(np.isfinite(precision)):
            raise NumericError("precision contains non-finite values")
        if not np.array_equal(precision, precision.T):
            raise UsageError("precision must be exactly symmetric")
        if linalg.eigvalsh(precision)[0] < self.eigen_floor:
            raise NumericError(
                "precision has an eigenvalue below the floor",
                resolution="Pass the matrix through project_to_floor first",
            )
        if not self.h0 > 0:
            raise UsageError("h0 must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "h0", float(self.h0))

    @property
    def dim(self) -> int:
        return self.center.size


@dataclass(frozen=True, eq=False)
class KernelConfig:
    """Precision and magnitude factor shared by every node of one series group."""
    precision: np.ndarray
    h0: float = 1.0
    eigen_floor: float = settings.EIGEN_FLOOR

    def __post_init__(self):
        precision = np.atleast_2d(np.asarray(self.precision, dtype=float))
        # validates through a node at the origin
        KernelNode(np.zeros(precision.shape[0]), precision, self.h0, self.eigen_floor)
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "h0", float(self.h0))

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    def node(self, center) -> KernelNode:
        return KernelNode(center, self.precision, self.h0, self.eigen_floor)

    def with_precision(self, precision: np.ndarray) -> "KernelConfig":
        return KernelConfig(precision, self.h0, self.eigen_floor)

    @classmethod
    def isotropic(cls, p_x: int, scale: float = 1.0, h0: float = 1.0) -> "KernelConfig":
        return cls(isotropic_precision(p_x, scale), h0)


@dataclass(frozen=True, eq=False)
class EigenTransform:
    """Eigen-geometry of a kernel.

    ``eigenvalues`` belong to the kernel covariance (the inverse of the
    precision), sorted descending; ``transform`` is ``U = [d_j / sqrt(l_j)]``
    so that ``(x - c)^T P (x - c) = ||U^T (x - c)||^2``.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    transform: np.ndarray


def _check_input(node: KernelNode, x) -> np.ndarray:
    vec = np.asarray(x, dtype=float).reshape(-1)
    if vec.size != node.dim:
        raise UsageError(f"input dimension {vec.size} does not match kernel dimension {node.dim}")
    if not np.all(np.isfinite(vec)):
        raise NumericError("input contains non-finite values")
    return vec


def quadratic_form(node: KernelNode, x) -> float:
    diff = _check_input(node, x) - node.center
    return max(float(diff @ node.precision @ diff), 0.0)


def eval_kernel(node: KernelNode, x) -> float:
    return float(np.exp(-quadratic_form(node, x) / node.h0))


def eigen_transform(node: KernelNode) -> EigenTransform:
    precision_values, vectors = linalg.eigh(node.precision)
    covariance_values = 1.0 / precision_values
    order = np.argsort(-covariance_values, kind="stable")
    covariance_values = covariance_values[order]
    vectors = vectors[:, order]
    return EigenTransform(
        eigenvalues=covariance_values,
        eigenvectors=vectors,
        transform=vectors / np.sqrt(covariance_values),
    )


def precision_from_eigen(transform: EigenTransform) -> np.ndarray:
    vectors = transform.eigenvectors
    return symmetrize((vectors / transform.eigenvalues) @ vectors.T)


def quadratic_form_eigen(transform: EigenTransform, center: np.ndarray, x) -> float:
    projected = transform.transform.T @ (np.asarray(x, dtype=float) - center)
    return float(projected @ projected)


def kernel_vector(centers: np.ndarray, precision: np.ndarray, h0: float, x) -> np.ndarray:
    """Kernel values of ``x`` against every row of ``centers`` (shared precision)."""
    vec = np.asarray(x, dtype=float).reshape(-1)
    if centers.shape[0] == 0:
        return np.zeros(0)
    if vec.size != centers.shape[1]:
        raise UsageError(f"input dimension {vec.size} does not match kernel dimension {centers.shape[1]}")
    if not np.all(np.isfinite(vec)):
        raise NumericError("input contains non-finite values")
    diffs = vec - centers
    quad = np.einsum("ij,jk,ik->i", diffs, precision, diffs)
    return np.exp(-np.maximum(quad, 0.0) / h0)


def empirical_covariance(
    samples: Sequence, weights: Sequence[float], center, h0: float
) -> np.ndarray:
    points = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise UsageError("empirical covariance needs at least one sample")
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != points.shape[0]:
        raise UsageError("weights and samples must have the same length")
    if np.any(w < 0):
        raise UsageError("weights must be non-negative")
    diffs = points - np.asarray(center, dtype=float).reshape(1, -1)
    covariance = h0 * np.einsum("j,ji,jk->ik", w, diffs, diffs)
    return symmetrize(covariance)


def precision_from_empirical(
    samples: Sequence, weights: Sequence[float], center, h0: float,
    eigen_floor: Optional[float] = None,
) -> np.ndarray:
    covariance = project_to_floor(empirical_covariance(samples, weights, center, h0), eigen_floor)
    return project_to_floor(linalg.inv(covariance), eigen_floor)


def default_c0(p_x: int) -> float:
    return 2.0 / p_x ** 2


def rank_one_precision_update(
    node: KernelNode,
    p_sigma,
    c0: Optional[float] = None,
    sign: int = 1,
    eigen_floor: Optional[float] = None,
) -> KernelNode:
    """``P <- (1 - c0) P + sign * p p^T``, then symmetrized and eigen-floored."""
    p = np.asarray(p_sigma, dtype=float).reshape(-1)
    if p.size != node.dim:
        raise UsageError(f"p_sigma dimension {p.size} does not match kernel dimension {node.dim}")
    if sign not in (1, -1):
        raise UsageError("sign must be +1 or -1")
    rate = default_c0(node.dim) if c0 is None else float(c0)
    if not 0.0 < rate < 1.0:
        raise UsageError("c0 must lie in (0, 1)")
    floor = node.eigen_floor if eigen_floor is None else eigen_floor
    updated = (1.0 - rate) * node.precision + sign * np.outer(p, p)
    return KernelNode(
        center=node.center,
        precision=project_to_floor(updated, floor),
        h0=node.h0,
        eigen_floor=floor,
    )
