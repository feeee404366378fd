#!/usr/bin/env python3
"""
Stochastic Block-ADMM (batch mode)

Trains a block-split network on the augmented objective

    J(Y, Z_T) + sum_t beta_t/2 ||Z_t - block_t(Z_{t-1}) + U_t||_F^2,  Z_0 = X

Every cycle updates all columns of every Z_t (Z_T first, then t = T-1 .. 1,
each using the already-updated Z_{t+1}), updates each Theta_t on drawn
minibatches, and finishes with one exact dual ascent sweep.

Columns of Z_t are independent, so each Z step works on the per-sample
objective l(y_i, z_i) + sum_t beta_t/2 ||r_ti||^2. SGD steps are divided by a
curvature bound of that objective, which makes z_lr a fraction of the way to
the minimizer (z_lr = 1 solves the terminal MSE step exactly).

Block indices t are 1-based in this module's public functions.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from modules.blocks.block import (
    Block,
    apply_gradients,
    block_backward,
    block_forward,
    lipschitz_bound,
)
from modules.blocks.model import Model, evaluate
from modules.data.dataset import Dataset
from modules.data.metrics import MetricsRecord, TrainingClock, check_record, print_epoch
from modules.errors import ShapeError
from modules.losses.objectives import (
    LOSS_CURVATURE,
    LOSS_KINDS,
    loss_value,
    sample_loss_grad,
)
from modules.tensor.ops import Rng, frob_norm, init_uniform
from modules.tensor.optim import OPTIMIZERS, AdamState, optimizer_step

# U(0, 1e-4) dual initialization
DUAL_INIT_HIGH = 1e-4
REPEAT_MODES = ("sweep", "theta")


@dataclass
class BatchAdmmConfig:
    beta: float | list[float] = 1.0
    z_lr: float | list[float] = 0.5
    theta_lr: float | list[float] = 5e-3
    primal_steps: int = 3
    batch_size: int = 64
    # minibatch draws per Theta update; 0 means one shuffled pass over all columns
    theta_batches: int = 0
    z_optimizer: str = "sgd"
    theta_optimizer: str = "adam"
    # "sweep" repeats the whole primal sweep, "theta" repeats only the Theta updates
    repeat: str = "sweep"
    dual_init: str = "uniform"
    loss: str = "mse"
    epochs: int = 100
    verbose: bool = False

    def validate(self, num_blocks: int):
        for name in ("beta", "z_lr", "theta_lr"):
            values = per_block(getattr(self, name), num_blocks, name)
            if any(not v > 0 for v in values):
                raise ValueError(f"{name} must be positive, got {values}")
        if self.primal_steps < 1:
            raise ValueError(f"primal_steps must be >= 1, got {self.primal_steps}")
        if self.batch_size < 1 or self.theta_batches < 0:
            raise ValueError("batch_size must be >= 1 and theta_batches >= 0")
        if self.z_optimizer not in OPTIMIZERS or self.theta_optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizers must be one of {OPTIMIZERS}")
        if self.repeat not in REPEAT_MODES:
            raise ValueError(f"repeat must be one of {REPEAT_MODES}")
        if self.dual_init not in ("uniform", "zeros"):
            raise ValueError(f"dual_init must be 'uniform' or 'zeros', got {self.dual_init}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


def per_block(value: float | list[float], num_blocks: int, name: str = "value") -> list[float]:
    if isinstance(value, (list, tuple)):
        if len(value) != num_blocks:
            raise ValueError(f"{name} lists {len(value)} values for {num_blocks} blocks")
        return [float(v) for v in value]
    return [float(value)] * num_blocks


@dataclass
class CouplingState:
    """Decoupling variables Z_t, scaled duals U_t and step sizes beta_t.

    Z[t-1] / U[t-1] belong to block t. inputs_override replaces the input of a
    block (block t+1 reads the NMF scores S when a factorization sits after
    block t).
    """

    X: np.ndarray
    Z: list[np.ndarray]
    U: list[np.ndarray]
    beta: list[float]
    z_adam: list[AdamState | None]
    inputs_override: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def num_blocks(self) -> int:
        return len(self.Z)

    def block_input(self, t: int) -> np.ndarray:
        if t in self.inputs_override:
            return self.inputs_override[t]
        return self.X if t == 1 else self.Z[t - 2]

    def element_count(self) -> int:
        """Stored coupling-variable entries (Z and U)."""
        return sum(z.size for z in self.Z) + sum(u.size for u in self.U)


class Penalty(NamedTuple):
    value: float
    grad_z: np.ndarray
    grad_prev: np.ndarray
    grad_params: list[np.ndarray]


def coupling_penalty(
    Z_t: np.ndarray,
    Z_prev: np.ndarray,
    U_t: np.ndarray,
    block: Block,
    beta: float,
    scale: float = 1.0,
) -> Penalty:
    """scale * beta/2 ||Z_t - block(Z_prev) + U_t||_F^2 and its gradients."""
    out, cache = block_forward(block, Z_prev)
    if out.shape != Z_t.shape or U_t.shape != Z_t.shape:
        raise ShapeError(
            f"block {block.index} output {out.shape}, Z {Z_t.shape} and U {U_t.shape} differ"
        )
    R = Z_t - out + U_t
    value = scale * 0.5 * beta * float(np.sum(R * R))
    grad_z = scale * beta * R
    grad_params, grad_prev = block_backward(block, cache, -grad_z)
    return Penalty(value, grad_z, grad_prev, grad_params)


def init_coupling(
    blocks: list[Block],
    X: np.ndarray,
    config: BatchAdmmConfig,
    rng: Rng,
) -> CouplingState:
    """Z_t from a forward pass; U_t from U(0, 1e-4) or zeros."""
    T = len(blocks)
    Z, U = [], []
    out = X
    for block in blocks:
        out = block_forward(block, out)[0]
        Z.append(out)
        if config.dual_init == "uniform":
            U.append(init_uniform(out.shape, 0.0, DUAL_INIT_HIGH, rng))
        else:
            U.append(np.zeros_like(out))
    return CouplingState(X, Z, U, per_block(config.beta, T, "beta"), [None] * T)


def step_z(
    state: CouplingState,
    t: int,
    grad: np.ndarray,
    lr: float,
    optimizer: str,
    curvature: float = 1.0,
):
    """SGD moves Z_t by lr / curvature along grad; Adam ignores the curvature."""
    if optimizer == "sgd":
        lr = lr / curvature
    state.Z[t - 1], state.z_adam[t - 1] = optimizer_step(
        optimizer, state.Z[t - 1], grad, state.z_adam[t - 1], lr
    )


def update_z_terminal(
    state: CouplingState,
    blocks: list[Block],
    Y: np.ndarray,
    loss: str,
    z_lr: float,
    optimizer: str = "sgd",
) -> CouplingState:
    """One descent step on l(y_i, z_i) + beta_T/2 ||r_Ti||^2 for every column."""
    T = state.num_blocks
    beta = state.beta[T - 1]
    penalty = coupling_penalty(
        state.Z[T - 1], state.block_input(T), state.U[T - 1], blocks[T - 1], beta
    )
    grad = sample_loss_grad(loss, Y, state.Z[T - 1]) + penalty.grad_z
    step_z(state, T, grad, z_lr, optimizer, LOSS_CURVATURE[loss] + beta)
    return state


def update_z_inner(
    state: CouplingState,
    blocks: list[Block],
    t: int,
    z_lr: float,
    optimizer: str = "sgd",
) -> CouplingState:
    """One descent step on T(Z_t, Z_{t-1}, ...) + T(Z_{t+1}, Z_t, ...)."""
    if not 1 <= t < state.num_blocks:
        raise ValueError(f"inner update needs 1 <= t < {state.num_blocks}, got {t}")
    if t + 1 in state.inputs_override:
        raise ValueError(f"block {t + 1} does not read Z_{t}; use the factorized update")

    own = coupling_penalty(
        state.Z[t - 1], state.block_input(t), state.U[t - 1], blocks[t - 1], state.beta[t - 1]
    )
    downstream = coupling_penalty(
        state.Z[t], state.Z[t - 1], state.U[t], blocks[t], state.beta[t]
    )
    curvature = state.beta[t - 1] + state.beta[t] * lipschitz_bound(blocks[t]) ** 2
    step_z(state, t, own.grad_z + downstream.grad_prev, z_lr, optimizer, curvature)
    return state


def augmented_objective(
    state: CouplingState, blocks: list[Block], Y: np.ndarray, loss: str
) -> float:
    """J(Y, Z_T) + 1/N sum_t beta_t/2 ||Z_t - block_t(input_t) + U_t||_F^2.

    Every Z and Theta step descends this quantity for small enough step sizes.
    """
    n = state.X.shape[1]
    total = loss_value(loss, Y, state.Z[-1])
    for t in range(1, state.num_blocks + 1):
        penalty = coupling_penalty(
            state.Z[t - 1], state.block_input(t), state.U[t - 1], blocks[t - 1],
            state.beta[t - 1], scale=1.0 / n,
        )
        total += penalty.value
    return total


def update_theta_minibatch(
    state: CouplingState,
    blocks: list[Block],
    t: int,
    theta_lr: float,
    batch_indices: np.ndarray,
    optimizer: str = "adam",
) -> list[Block]:
    """Optimizer step on Theta_t using the drawn columns.

    The penalty is divided by the batch size so the gradient scale does not
    depend on it.
    """
    idx = np.asarray(batch_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty minibatch")

    penalty = coupling_penalty(
        state.Z[t - 1][:, idx],
        state.block_input(t)[:, idx],
        state.U[t - 1][:, idx],
        blocks[t - 1],
        state.beta[t - 1],
        scale=1.0 / idx.size,
    )
    apply_gradients(blocks[t - 1], penalty.grad_params, theta_lr, optimizer)
    return blocks


def coupling_residuals(state: CouplingState, blocks: list[Block]) -> list[np.ndarray]:
    """Z_t - block_t(input_t) for every block, with fresh evaluations."""
    return [
        state.Z[t - 1] - block_forward(blocks[t - 1], state.block_input(t))[0]
        for t in range(1, state.num_blocks + 1)
    ]


def total_residual(state: CouplingState, blocks: list[Block]) -> float:
    return sum(frob_norm(r) for r in coupling_residuals(state, blocks))


def update_duals(state: CouplingState, blocks: list[Block]) -> CouplingState:
    """U_t += Z_t - block_t(Z_{t-1}) for every block."""
    for t, residual in enumerate(coupling_residuals(state, blocks), start=1):
        state.U[t - 1] = state.U[t - 1] + residual
    return state


def minibatches(n: int, batch_size: int, rng: Rng, count: int = 0) -> list[np.ndarray]:
    """Column index batches: one shuffled pass when count is 0, else count draws."""
    if count == 0:
        order = rng.permutation(n)
        return [order[i : i + batch_size] for i in range(0, n, batch_size)]
    size = min(batch_size, n)
    return [rng.permutation(n)[:size] for _ in range(count)]


def update_z_all(
    state: CouplingState, blocks: list[Block], Y: np.ndarray, config: BatchAdmmConfig
):
    """Z_T, then Z_{T-1} .. Z_1 (Gauss-Seidel)."""
    T = state.num_blocks
    z_lrs = per_block(config.z_lr, T, "z_lr")
    update_z_terminal(state, blocks, Y, config.loss, z_lrs[T - 1], config.z_optimizer)
    for t in range(T - 1, 0, -1):
        update_z_inner(state, blocks, t, z_lrs[t - 1], config.z_optimizer)


def update_theta_all(
    state: CouplingState, blocks: list[Block], config: BatchAdmmConfig, rng: Rng
):
    T = state.num_blocks
    theta_lrs = per_block(config.theta_lr, T, "theta_lr")
    n = state.X.shape[1]
    for idx in minibatches(n, config.batch_size, rng, config.theta_batches):
        for t in range(1, T + 1):
            update_theta_minibatch(
                state, blocks, t, theta_lrs[t - 1], idx, config.theta_optimizer
            )


def primal_sweeps(
    state: CouplingState,
    blocks: list[Block],
    Y: np.ndarray,
    config: BatchAdmmConfig,
    rng: Rng,
):
    for step in range(config.primal_steps):
        if config.repeat == "sweep" or step == 0:
            update_z_all(state, blocks, Y, config)
        update_theta_all(state, blocks, config, rng)


def train_cycle(
    state: CouplingState,
    blocks: list[Block],
    train: Dataset,
    config: BatchAdmmConfig,
    rng: Rng,
    epoch: int,
    clock: TrainingClock,
    test: Dataset | None = None,
) -> MetricsRecord:
    """Primal sweeps followed by one dual sweep; returns the epoch's metrics."""
    with clock:
        primal_sweeps(state, blocks, train.Y, config, rng)
        update_duals(state, blocks)

    model = Model(blocks)
    train_loss, _ = evaluate(model, train, config.loss)
    _, test_acc = evaluate(model, test if test is not None else train, config.loss)
    return MetricsRecord(
        epoch=epoch,
        wall_clock_seconds=clock.elapsed,
        train_loss=train_loss,
        test_accuracy=test_acc,
        total_coupling_residual=total_residual(state, blocks),
    )


def batch_admm_train(
    blocks: list[Block],
    train: Dataset,
    config: BatchAdmmConfig,
    rng: Rng,
    test: Dataset | None = None,
) -> tuple[CouplingState, list[MetricsRecord]]:
    """Run config.epochs cycles of batch Block-ADMM."""
    config.validate(len(blocks))
    state = init_coupling(blocks, train.X, config, rng)

    clock = TrainingClock()
    records = []
    for epoch in range(1, config.epochs + 1):
        record = train_cycle(state, blocks, train, config, rng, epoch, clock, test)
        check_record("block-admm", record)
        records.append(record)
        if config.verbose:
            print_epoch("block-admm", record)
    return state, records
