"""Thin SVD by one-sided (Hestenes) Jacobi rotations."""

from __future__ import annotations

import numpy as np


def _sweep(w: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> None:
    n = w.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = w[:, i] @ w[:, i]
                beta = w[:, j] @ w[:, j]
                gamma = w[:, i] @ w[:, j]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                if t == 0.0:
                    continue
                rotated = True
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wi = w[:, i].copy()
                w[:, i] = c * wi - s * w[:, j]
                w[:, j] = s * wi + c * w[:, j]
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            break


def svd_jacobi(a, tol: float = 1e-15, max_sweeps: int = 80):
    """Return ``(U, s, Vt)`` with ``a = U @ diag(s) @ Vt``, ``s`` descending.

    Columns of ``a`` (or of ``a.T`` when wide) are rotated pairwise until all
    pairs are orthogonal to within ``tol`` relative to their norms.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("svd_jacobi expects a matrix")
    wide = a.shape[0] < a.shape[1]
    w = a.T.copy() if wide else a.copy()
    v = np.eye(w.shape[1])
    with np.errstate(over="ignore"):  # zeta -> inf gives t = 0, a no-op rotation
        _sweep(w, v, tol, max_sweeps)
    sing = np.linalg.norm(w, axis=0)
    order = np.argsort(-sing, kind="stable")
    sing, w, v = sing[order], w[:, order], v[:, order]
    u = np.divide(w, sing, out=np.zeros_like(w), where=sing > 0)
    if wide:
        return v, sing, u.T
    return u, sing, v.T


def truncated_factors(a, rank: int):
    """Best rank-``rank`` factors ``(U * s, Vt)`` so that ``U @ V`` approximates ``a``."""
    u, s, vt = svd_jacobi(a)
    return u[:, :rank] * s[:rank], vt[:rank].copy()
