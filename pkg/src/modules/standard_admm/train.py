#!/usr/bin/env python3
"""
Standard ADMM Training

Full-batch per-layer ADMM baseline. One iteration solves, in order: every
W_l; then Z_l and A_l for l < L; then Z_L; then the dual ascent on U and V.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from modules.block_admm.batch import per_block
from modules.blocks.block import Block, split_network
from modules.blocks.layers import Linear, ReLU, default_boundaries
from modules.blocks.model import Model, evaluate
from modules.data.dataset import Dataset
from modules.data.metrics import MetricsRecord, TrainingClock, check_record, print_epoch
from modules.losses.objectives import LOSS_KINDS, loss_value
from modules.standard_admm.solvers import (
    CE_LR,
    CE_STEPS,
    solve_a,
    solve_w,
    solve_z_inner,
    solve_z_last,
)
from modules.tensor.ops import Rng, frob_norm, init_uniform, relu

INIT_HIGH = 1e-4


@dataclass
class StandardAdmmConfig:
    beta: float | list[float] = 10.0
    gamma: float | list[float] = 10.0
    weight_decay: float | list[float] = 5e-5
    loss: str = "mse"
    epochs: int = 100
    ce_steps: int = CE_STEPS
    ce_lr: float = CE_LR
    verbose: bool = False

    def validate(self, num_layers: int):
        for name in ("beta", "gamma"):
            values = per_block(getattr(self, name), num_layers, name)
            if any(not v > 0 for v in values):
                raise ValueError(f"{name} must be positive, got {values}")
        if any(v < 0 for v in per_block(self.weight_decay, num_layers, "weight_decay")):
            raise ValueError("weight_decay must be non-negative")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


@dataclass
class LayerAdmmState:
    """Per-layer variables; index l - 1 holds layer l, A and V stop at L - 1."""

    X: np.ndarray
    W: list[np.ndarray]
    Z: list[np.ndarray]
    A: list[np.ndarray]
    U: list[np.ndarray]
    V: list[np.ndarray]
    beta: list[float]
    gamma: list[float]
    weight_decay: list[float]

    @property
    def num_layers(self) -> int:
        return len(self.W)

    def layer_input(self, l: int) -> np.ndarray:
        return self.X if l == 1 else self.A[l - 2]

    def element_count(self) -> int:
        return sum(v.size for group in (self.Z, self.A, self.U, self.V) for v in group)


def init_layer_admm(
    X: np.ndarray, sizes: list[int], config: StandardAdmmConfig, rng: Rng
) -> LayerAdmmState:
    """W and duals from U(0, 1e-4); Z and A from the forward pass."""
    L = len(sizes) - 1
    W, Z, A, U, V = [], [], [], [], []
    out = X
    for l in range(1, L + 1):
        W.append(init_uniform((sizes[l], sizes[l - 1]), 0.0, INIT_HIGH, rng))
        Z.append(W[-1] @ out)
        U.append(init_uniform(Z[-1].shape, 0.0, INIT_HIGH, rng))
        if l < L:
            out = relu(Z[-1])
            A.append(out)
            V.append(init_uniform(out.shape, 0.0, INIT_HIGH, rng))
    return LayerAdmmState(
        X,
        W,
        Z,
        A,
        U,
        V,
        per_block(config.beta, L, "beta"),
        per_block(config.gamma, L, "gamma"),
        per_block(config.weight_decay, L, "weight_decay"),
    )


def augmented_lagrangian(state: LayerAdmmState, Y: np.ndarray, loss: str = "mse") -> float:
    L = state.num_layers
    value = loss_value(loss, Y, state.Z[L - 1])
    for l in range(1, L + 1):
        W = state.W[l - 1]
        value += state.weight_decay[l - 1] * float(np.sum(W * W))
        P = state.Z[l - 1] - W @ state.layer_input(l) + state.U[l - 1]
        value += 0.5 * state.beta[l - 1] * float(np.sum(P * P))
        if l < L:
            Q = state.A[l - 1] - relu(state.Z[l - 1]) + state.V[l - 1]
            value += 0.5 * state.gamma[l - 1] * float(np.sum(Q * Q))
    return value


def primal_sweep(
    state: LayerAdmmState,
    Y: np.ndarray,
    config: StandardAdmmConfig,
    trace: Callable[[str], None] | None = None,
) -> LayerAdmmState:
    """One pass of exact block minimizations with the duals held fixed.

    `trace` is called with a step label after every sub-step.
    """
    L = state.num_layers
    note = trace or (lambda step: None)

    # the W solves are independent of each other
    for l in range(1, L + 1):
        state.W[l - 1] = solve_w(
            state.Z[l - 1],
            state.U[l - 1],
            state.layer_input(l),
            state.beta[l - 1],
            state.weight_decay[l - 1],
        )
        note(f"W{l}")

    for l in range(1, L):
        state.Z[l - 1] = solve_z_inner(
            state.W[l - 1],
            state.layer_input(l),
            state.U[l - 1],
            state.A[l - 1],
            state.V[l - 1],
            state.beta[l - 1],
            state.gamma[l - 1],
        )
        note(f"Z{l}")
        state.A[l - 1] = solve_a(
            state.Z[l],
            state.U[l],
            state.W[l],
            state.Z[l - 1],
            state.V[l - 1],
            state.beta[l],
            state.gamma[l - 1],
        )
        note(f"A{l}")

    state.Z[L - 1] = solve_z_last(
        Y,
        state.W[L - 1],
        state.layer_input(L),
        state.U[L - 1],
        state.beta[L - 1],
        config.loss,
        config.ce_steps,
        config.ce_lr,
    )
    note(f"Z{L}")
    return state


def layer_residuals(state: LayerAdmmState) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """(Z_l - W_l A_{l-1}, A_l - relu(Z_l)) for every layer."""
    L = state.num_layers
    P = [state.Z[l - 1] - state.W[l - 1] @ state.layer_input(l) for l in range(1, L + 1)]
    Q = [state.A[l - 1] - relu(state.Z[l - 1]) for l in range(1, L)]
    return P, Q


def update_layer_duals(state: LayerAdmmState) -> LayerAdmmState:
    P, Q = layer_residuals(state)
    state.U = [u + p for u, p in zip(state.U, P)]
    state.V = [v + q for v, q in zip(state.V, Q)]
    return state


def to_blocks(state: LayerAdmmState) -> list[Block]:
    """Linear/ReLU network with the trained weights, one block per layer."""
    layers = []
    for l, W in enumerate(state.W, start=1):
        layers.append(Linear(W.copy()))
        if l < state.num_layers:
            layers.append(ReLU())
    return split_network(layers, default_boundaries(layers))


def standard_admm_train(
    train: Dataset,
    sizes: list[int],
    config: StandardAdmmConfig,
    rng: Rng,
    test: Dataset | None = None,
) -> tuple[LayerAdmmState, list[MetricsRecord]]:
    L = len(sizes) - 1
    config.validate(L)
    state = init_layer_admm(train.X, sizes, config, rng)

    clock = TrainingClock()
    records = []
    for epoch in range(1, config.epochs + 1):
        with clock:
            primal_sweep(state, train.Y, config)
            update_layer_duals(state)

        model = Model(to_blocks(state))
        train_loss, _ = evaluate(model, train, config.loss)
        _, test_acc = evaluate(model, test if test is not None else train, config.loss)
        P, Q = layer_residuals(state)
        record = MetricsRecord(
            epoch=epoch,
            wall_clock_seconds=clock.elapsed,
            train_loss=train_loss,
            test_accuracy=test_acc,
            total_coupling_residual=sum(frob_norm(r) for r in P + Q),
        )
        check_record("standard-admm", record)
        records.append(record)
        if config.verbose:
            print_epoch("standard-admm", record)
    return state, records
