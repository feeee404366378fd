#!/usr/bin/env python3
"""
Tensor Operations

Dense float64 arithmetic on numpy arrays, seeded random initialization and a
central finite-difference gradient used to check every analytic gradient.

Samples are stored as columns (d x N) everywhere in the toolkit.
"""

from collections.abc import Callable, Sequence

import numpy as np

from modules.errors import ShapeError

DTYPE = np.float64


class Rng:
    """Seeded random source.

    Wraps numpy's PCG64 bit generator (the PCG-XSL-RR 128/64 recurrence), whose
    stream is fixed for a given seed on every platform. All randomness in a run
    flows through one instance.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, shape: Sequence[int]) -> np.ndarray:
        return self.generator.uniform(lo, hi, size=tuple(shape))

    def normal(self, sigma: float, shape: Sequence[int]) -> np.ndarray:
        return self.generator.normal(0.0, sigma, size=tuple(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        return self.generator.integers(low, high, size=size)


def as_tensor(x) -> np.ndarray:
    """Return a C-contiguous float64 copy-free view of x when possible."""
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(x)))


def require_shape(x: np.ndarray, shape: Sequence[int], name: str = "tensor"):
    if tuple(x.shape) != tuple(shape):
        raise ShapeError(f"{name} has shape {tuple(x.shape)}, expected {tuple(shape)}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a (m x k) and b (k x n)."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_mask(x: np.ndarray) -> np.ndarray:
    """Subgradient of relu; 0 at the kink."""
    return (as_tensor(x) > 0.0).astype(DTYPE)


def frob_norm(x: np.ndarray) -> float:
    x = as_tensor(x)
    return float(np.sqrt(np.sum(x * x)))


def init_uniform(shape: Sequence[int], lo: float, hi: float, rng: Rng) -> np.ndarray:
    """Entries drawn i.i.d. from U[lo, hi)."""
    if not lo < hi:
        raise ValueError(f"invalid uniform range [{lo}, {hi})")
    return as_tensor(rng.uniform(lo, hi, shape))


def init_normal(shape: Sequence[int], sigma: float, rng: Rng) -> np.ndarray:
    """Entries drawn i.i.d. from N(0, sigma^2)."""
    if not sigma > 0:
        raise ValueError(f"invalid normal scale {sigma}")
    return as_tensor(rng.normal(sigma, shape))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one entry at a time."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + h
        upper = f(x)
        flat_x[i] = original - h
        lower = f(x)
        flat_x[i] = original
        flat_g[i] = (upper - lower) / (2.0 * h)
    return grad


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Labels (N,) to a C x N one-hot matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    y = np.zeros((num_classes, labels.size), dtype=DTYPE)
    y[labels, np.arange(labels.size)] = 1.0
    return y
