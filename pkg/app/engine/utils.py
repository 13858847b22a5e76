import logging
from typing import Optional

import numpy as np
from scipy import linalg


logger = logging.getLogger(__name__)


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    # (a_ij + a_ji) / 2 is bitwise identical to (a_ji + a_ij) / 2
    return (matrix + matrix.T) / 2.0


def spd_solve(matrix: np.ndarray, rhs: np.ndarray, what: str = "system", step: Optional[int] = None) -> np.ndarray:
    """Solve a symmetric positive-definite system by Cholesky.

    Falls back to the symmetric pseudo-inverse when the factorization fails.
    """
    try:
        factor = linalg.cho_factor(matrix, lower=True, check_finite=False)
        return linalg.cho_solve(factor, rhs, check_finite=False)
    except linalg.LinAlgError:
        logger.warning("Cholesky failed for %s at step %s, using pseudo-inverse", what, step)
        return linalg.pinvh(matrix) @ rhs


def spd_inverse(matrix: np.ndarray, what: str = "matrix", step: Optional[int] = None) -> np.ndarray:
    if matrix.size == 0:
        return np.zeros_like(matrix)
    return symmetrize(spd_solve(matrix, np.eye(matrix.shape[0]), what=what, step=step))
