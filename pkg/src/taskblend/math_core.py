"""Small dense linear-algebra helpers shared by every other module."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import kernels

PIVOT_TOL = 1e-12
RIDGE_FALLBACK = 1e-8
ZERO_NORM = 1e-30


class SingularMatrixError(ArithmeticError):
    pass


class ZeroVectorError(ArithmeticError):
    pass


class RidgeSolution(NamedTuple):
    x: np.ndarray
    fallback: bool
    ridge: float


def softmax(v) -> np.ndarray:
    """Max-shifted softmax of a finite vector."""
    return kernels.softmax(v)


def solve_linear_ridge(a, b, ridge: float = 0.0) -> RidgeSolution:
    """Solve ``(a + ridge*I) x = b`` by partial-pivot Gaussian elimination.

    If ``a`` itself meets a pivot below ``PIVOT_TOL`` the system is treated as
    ill-conditioned and solved with ``max(ridge, RIDGE_FALLBACK)`` instead;
    ``fallback`` is set in that case.  Raises :class:`SingularMatrixError`
    when even the regularized system has a vanishing pivot or fails the
    residual check.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: A {a.shape}, b {b.shape}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    n = a.shape[0]
    fallback = kernels.min_pivot(a) < PIVOT_TOL
    if fallback:
        ridge = max(ridge, RIDGE_FALLBACK)
    system = a + ridge * np.eye(n) if ridge else a
    x, piv = kernels.lu_solve(system, b)
    if piv < PIVOT_TOL:
        raise SingularMatrixError(f"pivot {piv:.3e} below {PIVOT_TOL} even with ridge {ridge:g}")
    residual = float(np.linalg.norm(system @ x - b))
    if not np.isfinite(residual) or residual > 1e-8 * (float(np.linalg.norm(b)) + 1.0):
        raise SingularMatrixError(f"residual {residual:.3e} too large")
    return RidgeSolution(x, fallback, float(ridge))


def cosine_similarity(u, v) -> float:
    c = kernels.cosine(u, v)
    if c != c:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return c
