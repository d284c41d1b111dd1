"""Symmetric eigen-decomposition by cyclic Jacobi rotations.

The information matrices handled here are small (d up to a few dozen), so a
dense cyclic sweep is accurate and deterministic: the same input always
yields the same eigenvector basis, which the eigenvalue design relies on
when it picks a subgradient for a repeated smallest eigenvalue.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import numpy.typing as npt

from chernsim.exceptions import DimensionError
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

OFF_DIAGONAL_TOL = 1e-12


def _off_norm(a: FloatArray) -> float:
    upper = np.triu(a, 1)
    return math.sqrt(2.0 * float(np.sum(upper * upper)))


def jacobi_eigh(
    sym: npt.ArrayLike,
    *,
    tol: float = OFF_DIAGONAL_TOL,
    max_sweeps: int = 100,
) -> tuple[FloatArray, FloatArray]:
    """Eigen-decompose a real symmetric matrix.

    Args:
        sym: Square symmetric matrix (only symmetric input is meaningful).
        tol: Stop once the off-diagonal Frobenius norm is at most
            ``tol * ||sym||_F``.
        max_sweeps: Upper bound on full cyclic sweeps.

    Returns:
        ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and the
        matching unit eigenvectors as columns. Each eigenvector is signed so
        its largest-magnitude entry is positive.
    """
    a = np.array(sym, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix has non-finite entries")

    d = a.shape[0]
    v = np.eye(d)
    scale = float(np.linalg.norm(a))
    if d > 1 and scale > 0.0:
        sweeps = 0
        while _off_norm(a) > tol * scale and sweeps < max_sweeps:
            sweeps += 1
            for p in range(d - 1):
                for q in range(p + 1, d):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if theta == 0.0:
                        t = 1.0
                    else:
                        t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    c = 1.0 / math.sqrt(t * t + 1.0)
                    s = t * c

                    row_p = a[p, :].copy()
                    row_q = a[q, :].copy()
                    a[p, :] = c * row_p - s * row_q
                    a[q, :] = s * row_p + c * row_q
                    col_p = a[:, p].copy()
                    col_q = a[:, q].copy()
                    a[:, p] = c * col_p - s * col_q
                    a[:, q] = s * col_p + c * col_q
                    a[p, q] = a[q, p] = 0.0

                    vec_p = v[:, p].copy()
                    vec_q = v[:, q].copy()
                    v[:, p] = c * vec_p - s * vec_q
                    v[:, q] = s * vec_p + c * vec_q
        if sweeps == max_sweeps:
            logger.warning("Jacobi stopped after %d sweeps (off-norm %.3g)", sweeps, _off_norm(a))

    eigvals = a.diagonal().copy()
    order = np.argsort(eigvals, kind="stable")
    eigvals = eigvals[order]
    v = v[:, order]
    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivots, np.arange(d)])
    signs[signs == 0.0] = 1.0
    return eigvals, v * signs
