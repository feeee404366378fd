#!/usr/bin/env python3
"""
Non-Negative Least Squares

Active-set solver (Lawson-Hanson) for min ||A x - b||_2 subject to x >= 0,
plus column- and row-wise batch helpers for the NMF updates.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from modules.errors import ShapeError
from modules.tensor.ops import as_tensor

KKT_TOL = 1e-10


@dataclass
class NnlsResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


@dataclass
class NnlsBatch:
    x: np.ndarray
    converged: bool


def _passive_lstsq(A: np.ndarray, b: np.ndarray, passive: np.ndarray) -> np.ndarray:
    s = np.zeros(A.shape[1])
    if passive.any():
        s[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
    return s


def nnls(
    A: np.ndarray, b: np.ndarray, tol: float = KKT_TOL, max_iter: int | None = None
) -> NnlsResult:
    """Solve argmin_x ||A x - b||_2 for x >= 0.

    The iteration cap defaults to 10 * k; when it is hit the best feasible
    iterate is returned with converged=False and a RuntimeWarning. The same
    happens when every remaining coordinate is blocked while one of them still
    has a positive gradient.
    """
    A = as_tensor(A)
    b = as_tensor(b)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ShapeError(f"nnls needs A (m x k) and b (m,), got {A.shape} and {b.shape}")

    m, k = A.shape
    max_iter = 10 * k if max_iter is None else max_iter

    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    # coordinates that failed to enter, skipped until the next successful step
    blocked = np.zeros(k, dtype=bool)
    w = A.T @ (b - A @ x)
    iterations = 0
    converged = True
    reason = ""

    while True:
        candidates = ~passive & ~blocked
        if not candidates.any() or w[candidates].max() <= tol:
            if blocked.any() and w[blocked].max() > tol:
                converged = False
                reason = "KKT conditions fail on blocked coordinates"
            break
        if iterations >= max_iter:
            converged = False
            reason = f"hit its iteration cap ({max_iter})"
            break
        iterations += 1

        j = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[j] = True
        s = _passive_lstsq(A, b, passive)

        if s[j] <= 0.0:
            passive[j] = False
            blocked[j] = True
            continue

        while np.any(s[passive] <= 0.0):
            bad = passive & (s <= 0.0)
            ratios = np.full(k, np.inf)
            ratios[bad] = x[bad] / (x[bad] - s[bad])
            i = int(np.argmin(ratios))
            x = x + ratios[i] * (s - x)
            x[i] = 0.0
            passive &= x > 0.0
            x[~passive] = 0.0
            s = _passive_lstsq(A, b, passive)

        x = s
        x[~passive] = 0.0
        blocked[:] = False
        w = A.T @ (b - A @ x)

    if not converged:
        warnings.warn(
            f"nnls {reason}; returning best feasible iterate",
            RuntimeWarning,
            stacklevel=2,
        )
    return NnlsResult(x, float(np.linalg.norm(A @ x - b)), iterations, converged)


def nnls_columns(A: np.ndarray, B: np.ndarray) -> NnlsBatch:
    """Solve one NNLS per column of B; returns X with A X ~ B, X >= 0."""
    A = as_tensor(A)
    B = as_tensor(B)
    if B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ShapeError(f"cannot project {B.shape} columns on a {A.shape} basis")
    X = np.zeros((A.shape[1], B.shape[1]))
    converged = True
    for j in range(B.shape[1]):
        result = nnls(A, B[:, j])
        X[:, j] = result.x
        converged &= result.converged
    return NnlsBatch(X, converged)


def nnls_rows(B: np.ndarray, S: np.ndarray) -> NnlsBatch:
    """Solve min ||M S - B|| over M >= 0 one row of M at a time."""
    batch = nnls_columns(as_tensor(S).T, as_tensor(B).T)
    return NnlsBatch(batch.x.T.copy(), batch.converged)
