#!/usr/bin/env python3
"""
Closed-Form ADMM Sub-Problem Solvers

Exact minimizers for the per-layer ADMM splitting

    J(Y, Z_L) + sum_l lambda_l ||W_l||_F^2
              + sum_l beta_l/2 ||Z_l - W_l A_{l-1} + U_l||^2
              + sum_{l<L} gamma_l/2 ||A_l - relu(Z_l) + V_l||^2

with A_0 = X. The last-layer cross-entropy solve has no closed form and runs
a short Adam minimization instead.
"""

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from modules.losses.objectives import loss_grad
from modules.tensor.ops import matmul, relu
from modules.tensor.optim import optimizer_step

# diagonal shift used when the W normal equations are singular
FALLBACK_RIDGE = 1e-10
CE_STEPS = 50
CE_LR = 0.1


def _spd_solve(G: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """Solve G X = rhs for SPD G, shifting the diagonal if Cholesky fails."""
    try:
        return cho_solve(cho_factor(G), rhs)
    except LinAlgError:
        shift = FALLBACK_RIDGE * max(1.0, float(np.trace(G)) / G.shape[0])
        warnings.warn(
            f"{what}: system is singular, solving with diagonal shift {shift:.3e}",
            RuntimeWarning,
            stacklevel=3,
        )
        return cho_solve(cho_factor(G + shift * np.eye(G.shape[0])), rhs)


def solve_w(
    Z: np.ndarray, U: np.ndarray, A_prev: np.ndarray, beta: float, weight_decay: float
) -> np.ndarray:
    """W = (Z + U) A^T (A A^T + (2 lambda / beta) I)^-1."""
    G = matmul(A_prev, A_prev.T) + (2.0 * weight_decay / beta) * np.eye(A_prev.shape[0])
    rhs = matmul(Z + U, A_prev.T)
    return _spd_solve(G, rhs.T, "solve_w").T


def solve_a(
    Z_next: np.ndarray,
    U_next: np.ndarray,
    W_next: np.ndarray,
    Z: np.ndarray,
    V: np.ndarray,
    beta_next: float,
    gamma: float,
) -> np.ndarray:
    """A = (beta W^T W + gamma I)^-1 (beta W^T (Z_next + U_next) + gamma (relu(Z) - V))."""
    G = beta_next * matmul(W_next.T, W_next) + gamma * np.eye(W_next.shape[1])
    rhs = beta_next * matmul(W_next.T, Z_next + U_next) + gamma * (relu(Z) - V)
    return _spd_solve(G, rhs, "solve_a")


def z_inner_objective(z, a, b, beta: float, gamma: float):
    return 0.5 * beta * (z - a) ** 2 + 0.5 * gamma * (b - np.maximum(z, 0.0)) ** 2


def solve_z_inner(
    W: np.ndarray,
    A_prev: np.ndarray,
    U: np.ndarray,
    A: np.ndarray,
    V: np.ndarray,
    beta: float,
    gamma: float,
) -> np.ndarray:
    """Entrywise argmin of beta/2 (z - a)^2 + gamma/2 (b - relu(z))^2.

    a = W A_prev - U, b = A + V. The z >= 0 and z <= 0 branch minimizers are
    compared; ties go to the non-negative branch.
    """
    a = matmul(W, A_prev) - U
    b = A + V
    z_pos = np.maximum((beta * a + gamma * b) / (beta + gamma), 0.0)
    z_neg = np.minimum(a, 0.0)
    f_pos = z_inner_objective(z_pos, a, b, beta, gamma)
    f_neg = z_inner_objective(z_neg, a, b, beta, gamma)
    return np.where(f_pos <= f_neg, z_pos, z_neg)


def solve_z_last(
    Y: np.ndarray,
    W: np.ndarray,
    A_prev: np.ndarray,
    U: np.ndarray,
    beta: float,
    loss: str = "mse",
    steps: int = CE_STEPS,
    lr: float = CE_LR,
) -> np.ndarray:
    """argmin_Z J(Y, Z) + beta/2 ||Z - W A_prev + U||^2."""
    a = matmul(W, A_prev) - U
    if loss == "mse":
        n = Y.shape[1]
        return (Y / n + beta * a) / (1.0 / n + beta)

    # no closed form: Adam from the penalty minimizer
    Z, state = a.copy(), None
    for _ in range(steps):
        grad = loss_grad(loss, Y, Z) + beta * (Z - a)
        Z, state = optimizer_step("adam", Z, grad, state, lr)
    return Z
