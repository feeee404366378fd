#!/usr/bin/env python3
"""
Per-Variable Optimizer Steps

Adam (with bias correction) and plain SGD steps on a single array. Used for
block parameters, decoupling variables and the iterative last-layer solve.
"""

from dataclasses import dataclass

import numpy as np

from modules.errors import ShapeError

OPTIMIZERS = ("sgd", "adam")


@dataclass
class AdamState:
    """First/second moment estimates for one variable."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **constants) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **constants)


def adam_step(
    param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One Adam step; returns the new parameter and the new state."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"adam shapes differ: param {param.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")

    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    updated = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if param.shape != grad.shape:
        raise ShapeError(f"sgd shapes differ: param {param.shape}, grad {grad.shape}")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return param - lr * grad


def optimizer_step(
    kind: str,
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState | None,
    lr: float,
) -> tuple[np.ndarray, AdamState | None]:
    """Dispatch on optimizer kind; Adam state is created on first use."""
    if kind == "sgd":
        return sgd_step(param, grad, lr), state
    if kind == "adam":
        if state is None:
            state = AdamState.zeros_like(param)
        return adam_step(param, grad, state, lr)
    raise ValueError(f"unknown optimizer '{kind}', expected one of {OPTIMIZERS}")
