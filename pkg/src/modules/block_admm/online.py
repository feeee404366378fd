#!/usr/bin/env python3
"""
Online Block-ADMM

Per-minibatch variant with one scalar dual per block. The decoupling
variables are re-created by a forward pass for every batch and discarded
after it, so only the scalars u_t and the block parameters persist.

The penalty is beta/2 (||z_t - block(z_{t-1})|| + u_t)^2 with the Frobenius
norm of the batch residual. `penalty_form="squared-plus-dual"` switches to
beta/2 (||.||^2 + u_t) for comparison.

Both forms have gradient kappa * R in z_t, with kappa = beta (r + u) / r for
the norm form (0 at r = 0) and kappa = beta for the squared form. SGD z steps
are divided by the matching curvature bound, as in batch mode. Adam z steps
start from fresh moments every batch because z itself is fresh.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from modules.block_admm.batch import minibatches, per_block
from modules.blocks.block import (
    Block,
    apply_gradients,
    block_apply,
    block_backward,
    block_forward,
    lipschitz_bound,
)
from modules.blocks.model import Model, evaluate
from modules.data.dataset import Dataset
from modules.data.metrics import MetricsRecord, TrainingClock, check_record, print_epoch
from modules.losses.objectives import LOSS_CURVATURE, LOSS_KINDS, loss_value, sample_loss_grad
from modules.tensor.ops import Rng, frob_norm
from modules.tensor.optim import OPTIMIZERS, optimizer_step

PENALTY_FORMS = ("norm-plus-dual", "squared-plus-dual")


@dataclass
class OnlineAdmmConfig:
    beta: float | list[float] = 1.0
    z_lr: float | list[float] = 0.5
    theta_lr: float | list[float] = 5e-3
    batch_size: int = 64
    z_optimizer: str = "sgd"
    theta_optimizer: str = "adam"
    penalty_form: str = "norm-plus-dual"
    loss: str = "mse"
    epochs: int = 100
    verbose: bool = False

    def validate(self, num_blocks: int):
        for name in ("beta", "z_lr", "theta_lr"):
            values = per_block(getattr(self, name), num_blocks, name)
            if any(not v > 0 for v in values):
                raise ValueError(f"{name} must be positive, got {values}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.z_optimizer not in OPTIMIZERS or self.theta_optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizers must be one of {OPTIMIZERS}")
        if self.penalty_form not in PENALTY_FORMS:
            raise ValueError(f"penalty_form must be one of {PENALTY_FORMS}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


@dataclass
class OnlineCouplingState:
    u: list[float]
    beta: list[float]
    # largest number of transient z entries alive during one step
    peak_elements: int = 0

    @property
    def num_blocks(self) -> int:
        return len(self.u)

    def element_count(self) -> int:
        """Coupling storage: the scalar duals plus the transient z peak."""
        return len(self.u) + self.peak_elements


class OnlinePenalty(NamedTuple):
    value: float
    residual_norm: float
    curvature: float
    grad_z: np.ndarray
    grad_prev: np.ndarray
    grad_params: list[np.ndarray]


def online_penalty(
    z_t: np.ndarray,
    z_prev: np.ndarray,
    u_t: float,
    block: Block,
    beta: float,
    form: str = "norm-plus-dual",
) -> OnlinePenalty:
    """Scalar-dual penalty and its gradients; the norm gradient is 0 at r = 0."""
    out, cache = block_forward(block, z_prev)
    R = z_t - out
    r = frob_norm(R)

    if form == "norm-plus-dual":
        value = 0.5 * beta * (r + u_t) ** 2
        kappa = beta * (r + u_t) / r if r > 0.0 else 0.0
    elif form == "squared-plus-dual":
        value = 0.5 * beta * (r * r + u_t)
        kappa = beta
    else:
        raise ValueError(f"unknown penalty form '{form}', expected one of {PENALTY_FORMS}")

    grad_z = kappa * R
    grad_params, grad_prev = block_backward(block, cache, -grad_z)
    return OnlinePenalty(value, r, kappa, grad_z, grad_prev, grad_params)


def init_online_state(num_blocks: int, config: OnlineAdmmConfig) -> OnlineCouplingState:
    return OnlineCouplingState([0.0] * num_blocks, per_block(config.beta, num_blocks, "beta"))


def _step(z: np.ndarray, grad: np.ndarray, lr: float, optimizer: str, curvature: float):
    if optimizer == "sgd":
        if curvature <= 0.0:
            return z
        lr = lr / curvature
    return optimizer_step(optimizer, z, grad, None, lr)[0]


def online_sample_step(
    x: np.ndarray,
    y: np.ndarray,
    blocks: list[Block],
    state: OnlineCouplingState,
    config: OnlineAdmmConfig,
) -> tuple[list[Block], OnlineCouplingState, float]:
    """One online iteration on a sample (or column batch).

    Returns the batch loss measured on the forward initialization, before
    any update.
    """
    T = len(blocks)
    z_lrs = per_block(config.z_lr, T, "z_lr")
    theta_lrs = per_block(config.theta_lr, T, "theta_lr")
    form = config.penalty_form

    # z[0] is the input; z[t] belongs to block t
    z = [x]
    for block in blocks:
        z.append(block_apply(block, z[-1]))
    state.peak_elements = max(state.peak_elements, sum(v.size for v in z[1:]))
    loss = loss_value(config.loss, y, z[T])

    def penalty(t: int) -> OnlinePenalty:
        return online_penalty(
            z[t], z[t - 1], state.u[t - 1], blocks[t - 1], state.beta[t - 1], form
        )

    last = penalty(T)
    grad = sample_loss_grad(config.loss, y, z[T]) + last.grad_z
    curvature = LOSS_CURVATURE[config.loss] + last.curvature
    z[T] = _step(z[T], grad, z_lrs[T - 1], config.z_optimizer, curvature)
    for t in range(T - 1, 0, -1):
        own = penalty(t)
        downstream = penalty(t + 1)
        curvature = own.curvature + downstream.curvature * lipschitz_bound(blocks[t]) ** 2
        z[t] = _step(
            z[t], own.grad_z + downstream.grad_prev, z_lrs[t - 1], config.z_optimizer, curvature
        )

    for t in range(1, T + 1):
        apply_gradients(
            blocks[t - 1], penalty(t).grad_params, theta_lrs[t - 1], config.theta_optimizer
        )

    for t in range(1, T + 1):
        state.u[t - 1] += frob_norm(z[t] - block_apply(blocks[t - 1], z[t - 1]))
    return blocks, state, loss


def online_train(
    blocks: list[Block],
    train: Dataset,
    config: OnlineAdmmConfig,
    rng: Rng,
    test: Dataset | None = None,
) -> tuple[OnlineCouplingState, list[MetricsRecord]]:
    """Shuffled minibatch passes; each epoch touches every column once.

    The recorded coupling residual is the epoch mean of the per-batch sum of
    residual norms added to the duals.
    """
    T = len(blocks)
    config.validate(T)
    state = init_online_state(T, config)

    clock = TrainingClock()
    records = []
    for epoch in range(1, config.epochs + 1):
        added = []
        with clock:
            for idx in minibatches(train.n_samples, config.batch_size, rng):
                before = sum(state.u)
                online_sample_step(train.X[:, idx], train.Y[:, idx], blocks, state, config)
                added.append(sum(state.u) - before)

        model = Model(blocks)
        train_loss, _ = evaluate(model, train, config.loss)
        _, test_acc = evaluate(model, test if test is not None else train, config.loss)
        record = MetricsRecord(
            epoch=epoch,
            wall_clock_seconds=clock.elapsed,
            train_loss=train_loss,
            test_accuracy=test_acc,
            total_coupling_residual=float(np.mean(added)),
        )
        check_record("online", record)
        records.append(record)
        if config.verbose:
            print_epoch("online", record)
    return state, records
