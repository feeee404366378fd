#!/usr/bin/env python3
"""
Training Objectives

MSE and softmax cross-entropy over C x N prediction matrices, their gradients
with respect to the predictions, and classification accuracy.
"""

import numpy as np

from modules.errors import DataError, ShapeError

LOSS_KINDS = ("mse", "ce")
# largest Hessian eigenvalue of the per-sample loss in the predictions
LOSS_CURVATURE = {"mse": 1.0, "ce": 0.5}


def _check_pair(Y: np.ndarray, Z: np.ndarray):
    if Y.shape != Z.shape:
        raise ShapeError(f"targets {Y.shape} and predictions {Z.shape} differ")
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ShapeError(f"need a C x N matrix with N >= 1, got {Z.shape}")


def _check_one_hot(Y: np.ndarray):
    if not (np.all((Y == 0.0) | (Y == 1.0)) and np.all(Y.sum(axis=0) == 1.0)):
        raise DataError("targets are not one-hot columns")


def mse_loss(Y: np.ndarray, Z: np.ndarray) -> float:
    """J = 1/(2N) ||Y - Z||_F^2."""
    _check_pair(Y, Z)
    diff = Y - Z
    return float(np.sum(diff * diff) / (2.0 * Z.shape[1]))


def mse_grad(Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    _check_pair(Y, Z)
    return (Z - Y) / Z.shape[1]


def softmax(Z: np.ndarray) -> np.ndarray:
    shifted = Z - Z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_ce_loss(Y: np.ndarray, Z: np.ndarray) -> float:
    """Mean over columns of -log softmax(Z)[true class]."""
    _check_pair(Y, Z)
    _check_one_hot(Y)
    peak = Z.max(axis=0, keepdims=True)
    log_norm = np.log(np.exp(Z - peak).sum(axis=0)) + peak[0]
    true_logit = np.sum(Y * Z, axis=0)
    return float(np.mean(log_norm - true_logit))


def softmax_ce_grad(Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    _check_pair(Y, Z)
    _check_one_hot(Y)
    return (softmax(Z) - Y) / Z.shape[1]


def loss_value(kind: str, Y: np.ndarray, Z: np.ndarray) -> float:
    if kind == "mse":
        return mse_loss(Y, Z)
    if kind == "ce":
        return softmax_ce_loss(Y, Z)
    raise ValueError(f"unknown loss '{kind}', expected one of {LOSS_KINDS}")


def loss_grad(kind: str, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    if kind == "mse":
        return mse_grad(Y, Z)
    if kind == "ce":
        return softmax_ce_grad(Y, Z)
    raise ValueError(f"unknown loss '{kind}', expected one of {LOSS_KINDS}")


def sample_loss_grad(kind: str, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Column i holds the gradient of sample i's own loss (N times loss_grad)."""
    return loss_grad(kind, Y, Z) * Z.shape[1]


def accuracy(Y: np.ndarray, Z: np.ndarray) -> float:
    """Fraction of columns whose argmax agrees; ties go to the lowest index."""
    if Y.shape != Z.shape:
        raise ShapeError(f"targets {Y.shape} and predictions {Z.shape} differ")
    if Z.shape[1] == 0:
        return 0.0
    return float(np.mean(np.argmax(Z, axis=0) == np.argmax(Y, axis=0)))
