#!/usr/bin/env python3
"""
Convergence Mode

Adaptive penalty schedule wrapped around batch Block-ADMM. At outer step k
every block uses beta_t = 1 / rho_k; the primal sweeps run until the squared
gradient norm of the augmented objective drops to eps_k (or a cap); the
duals take one step; then rho contracts by c whenever the stacked coupling
residual ||h|| exceeds the bound eta_k.

Duals are kept in scaled form, so U is rescaled by rho_new / rho_old when
rho changes.
"""

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from modules.block_admm.batch import (
    BatchAdmmConfig,
    CouplingState,
    coupling_penalty,
    coupling_residuals,
    init_coupling,
    minibatches,
    per_block,
    update_duals,
    update_theta_minibatch,
    update_z_all,
)
from modules.blocks.block import Block
from modules.blocks.model import Model, evaluate
from modules.data.dataset import Dataset
from modules.data.metrics import MetricsRecord, TrainingClock, check_record, print_epoch
from modules.losses.objectives import loss_grad
from modules.tensor.ops import Rng

TRACE_COLUMNS = (
    "k",
    "rho",
    "eta_k",
    "eps_k",
    "h_norm",
    "inner_iterations",
    "grad_norm_sq",
    "cap_hit",
)


@dataclass(frozen=True)
class PenaltySchedule:
    rho: float = 1.0
    contraction: float = 0.9
    residual_bound: float = 1.0
    bound_decay: float = 0.95
    tolerance: float = 1.0
    tolerance_decay: float = 0.95
    k: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        for name in ("contraction", "bound_decay", "tolerance_decay"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if not (self.residual_bound > 0 and self.tolerance > 0):
            raise ValueError("residual_bound and tolerance must be positive")


def rho_update(schedule: PenaltySchedule, residual_norm: float) -> PenaltySchedule:
    """Keep rho when ||h|| <= eta_k, else multiply by c; advance k, eta and eps."""
    if residual_norm < 0:
        raise ValueError(f"residual norm must be non-negative, got {residual_norm}")
    rho = schedule.rho
    if residual_norm > schedule.residual_bound:
        rho = schedule.contraction * rho
    return replace(
        schedule,
        rho=rho,
        residual_bound=schedule.residual_bound * schedule.bound_decay,
        tolerance=schedule.tolerance * schedule.tolerance_decay,
        k=schedule.k + 1,
    )


@dataclass
class ConvergenceConfig:
    outer_iterations: int = 50
    inner_cap: int = 200
    # Theta minibatch size grows by this factor per outer step, up to N
    batch_growth: float = 1.5

    def validate(self):
        if self.outer_iterations < 1 or self.inner_cap < 1:
            raise ValueError("outer_iterations and inner_cap must be >= 1")
        if self.batch_growth < 1.0:
            raise ValueError(f"batch_growth must be >= 1, got {self.batch_growth}")


@dataclass
class TraceRow:
    k: int
    rho: float
    eta_k: float
    eps_k: float
    h_norm: float
    inner_iterations: int
    grad_norm_sq: float
    cap_hit: bool


def stacked_residual_norm(state: CouplingState, blocks: list[Block]) -> float:
    """||h|| with h the concatenation of Z_t - block_t(Z_{t-1}), t ascending."""
    return math.sqrt(sum(float(np.sum(r * r)) for r in coupling_residuals(state, blocks)))


def augmented_grad_norm_sq(
    state: CouplingState, blocks: list[Block], Y: np.ndarray, loss: str
) -> float:
    """Squared gradient norm of augmented_objective over all Z_t and Theta_t.

    The penalty carries the same 1/N as the loss, matching the scale the
    minibatch Theta updates descend.
    """
    T = state.num_blocks
    n = state.X.shape[1]
    penalties = [
        coupling_penalty(
            state.Z[t - 1], state.block_input(t), state.U[t - 1], blocks[t - 1],
            state.beta[t - 1], scale=1.0 / n,
        )
        for t in range(1, T + 1)
    ]
    total = 0.0
    for t in range(1, T + 1):
        grad_z = penalties[t - 1].grad_z
        if t == T:
            grad_z = grad_z + loss_grad(loss, Y, state.Z[T - 1])
        else:
            grad_z = grad_z + penalties[t].grad_prev
        total += float(np.sum(grad_z * grad_z))
        total += sum(float(np.sum(g * g)) for g in penalties[t - 1].grad_params)
    return total


def set_penalty(state: CouplingState, rho: float):
    """beta_t = 1/rho for every block; scaled duals follow the change."""
    new_beta = 1.0 / rho
    for t in range(state.num_blocks):
        if state.beta[t] != new_beta:
            state.U[t] = state.U[t] * (state.beta[t] / new_beta)
            state.beta[t] = new_beta


def write_trace_csv(path: Path, trace: list[TraceRow]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace:
            writer.writerow(
                [
                    row.k,
                    repr(row.rho),
                    repr(row.eta_k),
                    repr(row.eps_k),
                    repr(row.h_norm),
                    row.inner_iterations,
                    repr(row.grad_norm_sq),
                    str(row.cap_hit).lower(),
                ]
            )


def convergence_mode_train(
    blocks: list[Block],
    train: Dataset,
    config: BatchAdmmConfig,
    schedule: PenaltySchedule,
    conv: ConvergenceConfig,
    rng: Rng,
    test: Dataset | None = None,
) -> tuple[CouplingState, list[MetricsRecord], list[TraceRow]]:
    """Outer steps of primal solve, dual step and rho update.

    Theta learning rates from `config` are divided by max(1, beta_k); the Z
    steps are already curvature-normalized. The inner sweep count never drops
    below the previous outer step's count.
    """
    T = len(blocks)
    config.validate(T)
    conv.validate()
    n = train.n_samples

    state = init_coupling(blocks, train.X, config, rng)
    set_penalty(state, schedule.rho)
    base_theta = per_block(config.theta_lr, T, "theta_lr")

    clock = TrainingClock()
    records, trace = [], []
    previous_inner = 1
    for k in range(conv.outer_iterations):
        rho = schedule.rho
        batch_size = min(n, math.ceil(config.batch_size * conv.batch_growth**k))
        with clock:
            set_penalty(state, rho)
            scale = 1.0 / max(1.0, 1.0 / rho)
            step_config = replace(config, theta_lr=[lr * scale for lr in base_theta])
            theta_lrs = step_config.theta_lr

            inner, cap_hit = 0, False
            while True:
                update_z_all(state, blocks, train.Y, step_config)
                for idx in minibatches(n, batch_size, rng, config.theta_batches):
                    for t in range(1, T + 1):
                        update_theta_minibatch(
                            state, blocks, t, theta_lrs[t - 1], idx, config.theta_optimizer
                        )
                inner += 1
                grad_sq = augmented_grad_norm_sq(state, blocks, train.Y, config.loss)
                if inner >= previous_inner and grad_sq <= schedule.tolerance:
                    break
                if inner >= conv.inner_cap:
                    cap_hit = grad_sq > schedule.tolerance
                    break
            previous_inner = inner

            h_norm = stacked_residual_norm(state, blocks)
            update_duals(state, blocks)

        if cap_hit:
            warnings.warn(
                f"outer step {k}: primal tolerance {schedule.tolerance:.3e} not met "
                f"after {inner} sweeps (|G|^2={grad_sq:.3e})",
                RuntimeWarning,
                stacklevel=2,
            )
        trace.append(
            TraceRow(
                k,
                rho,
                schedule.residual_bound,
                schedule.tolerance,
                h_norm,
                inner,
                grad_sq,
                cap_hit,
            )
        )

        model = Model(blocks)
        train_loss, _ = evaluate(model, train, config.loss)
        _, test_acc = evaluate(model, test if test is not None else train, config.loss)
        record = MetricsRecord(
            epoch=k + 1,
            wall_clock_seconds=clock.elapsed,
            train_loss=train_loss,
            test_accuracy=test_acc,
            total_coupling_residual=h_norm,
            rho=rho,
        )
        check_record("convergence", record)
        records.append(record)
        if config.verbose:
            print_epoch("convergence", record)

        schedule = rho_update(schedule, h_norm)

    return state, records, trace
