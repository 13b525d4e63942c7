"""Dense linear algebra for small symmetric positive-definite matrices.

Everything here works on plain ``numpy`` arrays. The sizes of interest are
tiny (noise covariances of dimension ``d <= 10`` and information matrices of
dimension ``s <= 200``), so the routines favour clarity over blocking.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50
SMALL_DIM = 12


def _square(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def symmetrize(a) -> np.ndarray:
    """Return ``(a + a.T) / 2``, which is exactly symmetric."""
    a = _square(a)
    return 0.5 * (a + a.T)


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == a``.

    No jitter is ever added: a pivot ``<= 0`` raises
    :class:`NotPositiveDefinite` so callers can treat the point as infeasible.
    Only the lower triangle of ``a`` is read.
    """
    a = _square(a)
    n = a.shape[0]
    if n <= SMALL_DIM:
        return np.array(_cholesky_small(a.tolist()), dtype=float).reshape(n, n)
    low = np.zeros_like(a)
    for j in range(n):
        row = low[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > 0.0:
            raise NotPositiveDefinite(f"pivot {j} is {pivot!r}")
        diag = math.sqrt(pivot)
        low[j, j] = diag
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ row) / diag
    return low


def _cholesky_small(a: list[list[float]]) -> list[list[float]]:
    # scalar loops beat numpy call overhead for covariances up to SMALL_DIM
    n = len(a)
    low = [[0.0] * n for _ in range(n)]
    for j in range(n):
        lj = low[j]
        pivot = a[j][j] - sum(x * x for x in lj[:j])
        if not pivot > 0.0:
            raise NotPositiveDefinite(f"pivot {j} is {pivot!r}")
        diag = math.sqrt(pivot)
        lj[j] = diag
        for i in range(j + 1, n):
            li = low[i]
            li[j] = (a[i][j] - sum(li[k] * lj[k] for k in range(j))) / diag
    return low


def logdet(a) -> float:
    low = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(low))))


def tril_inverse(low: np.ndarray) -> np.ndarray:
    """Inverse of a lower-triangular matrix by forward substitution."""
    n = low.shape[0]
    inv = np.zeros_like(low)
    for i in range(n):
        inv[i, :i + 1] = -(low[i, :i] @ inv[:i, :i + 1])
        inv[i, i] += 1.0
        inv[i, :i + 1] /= low[i, i]
    return inv


def spd_inverse(a) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor; exactly symmetric."""
    linv = tril_inverse(cholesky(a))
    return symmetrize(linv.T @ linv)


def logdet_and_inverse(a) -> tuple[float, np.ndarray]:
    """Both quantities from a single factorization (the cost hot path)."""
    a = _square(a)
    n = a.shape[0]
    if n > SMALL_DIM:
        low = cholesky(a)
        linv = tril_inverse(low)
        inv = linv.T @ linv
        return 2.0 * float(np.sum(np.log(np.diag(low)))), 0.5 * (inv + inv.T)
    low = _cholesky_small(a.tolist())
    # forward substitution for L^{-1}, then L^{-T} L^{-1}
    linv = [[0.0] * n for _ in range(n)]
    for i in range(n):
        li = low[i]
        xi = linv[i]
        for j in range(i):
            xi[j] = -sum(li[k] * linv[k][j] for k in range(j, i)) / li[i]
        xi[i] = 1.0 / li[i]
    inv = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            v = sum(linv[k][i] * linv[k][j] for k in range(i, n))
            inv[i][j] = inv[j][i] = v
    ld = 2.0 * sum(math.log(low[i][i]) for i in range(n))
    return ld, np.array(inv)


def trace_prod(a, b) -> float:
    """``tr(a @ b)`` without forming the product."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.T.shape or a.shape[0] != b.shape[1]:
        raise DimensionMismatch(f"cannot trace product of {a.shape} and {b.shape}")
    return float(np.sum(a * b.T))


def sym_eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in descending order.

    Cyclic Jacobi rotations. Stops when the off-diagonal Frobenius norm drops
    below ``JACOBI_TOL`` times the Frobenius norm of ``a``; raises
    :class:`NoConvergence` after ``JACOBI_MAX_SWEEPS`` sweeps.
    """
    m = symmetrize(a).copy()
    n = m.shape[0]
    scale = float(np.linalg.norm(m))
    if n == 1 or scale == 0.0:
        return np.sort(np.diag(m))[::-1].copy()

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm() -> float:
        # direct sum; subtracting the diagonal from the total cancels badly
        return float(np.linalg.norm(m[off_mask]))

    for _ in range(JACOBI_MAX_SWEEPS):
        if off_norm() <= JACOBI_TOL * scale:
            return np.sort(np.diag(m))[::-1].copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                diff = m[q, q] - m[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                mp = m[:, p].copy()
                mq = m[:, q].copy()
                m[:, p] = c * mp - s * mq
                m[:, q] = s * mp + c * mq
                mp = m[p, :].copy()
                mq = m[q, :].copy()
                m[p, :] = c * mp - s * mq
                m[q, :] = s * mp + c * mq
                m[p, q] = m[q, p] = 0.0
    if off_norm() <= JACOBI_TOL * scale:
        return np.sort(np.diag(m))[::-1].copy()
    raise NoConvergence(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
