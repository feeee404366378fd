#!/usr/bin/env python3
"""
DeepFacto

A non-negative factorization Z_t ~ M S (M, S >= 0) inserted after block t and
trained jointly with the blocks on the augmented objective

    J(Y, Z_T) + sum_{k != t+1} beta_k/2 ||Z_k - block_k(Z_{k-1}) + U_k||^2
              + beta_{t+1}/2 ||Z_{t+1} - block_{t+1}(S) + U_{t+1}||^2
              + gamma/2 ||Z_t - M S + V||^2

Only S feeds the next block. Position 0 factorizes the input X itself.
Training runs in two phases: NMF pretraining with the blocks frozen, then
alternating cycles over blocks and NMF variables.

The dual V only moves while Z_t moves. With Z_t fixed (pretraining, and
position 0 throughout) V stays at zero and the factorization term is a plain
penalty.
"""

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from modules.block_admm.batch import (
    BatchAdmmConfig,
    CouplingState,
    coupling_penalty,
    init_coupling,
    per_block,
    step_z,
    total_residual,
    update_duals,
    update_theta_all,
    update_z_inner,
    update_z_terminal,
)
from modules.blocks.block import Block, block_apply, split_network
from modules.blocks.layers import Linear, ReLU, build_mlp, default_boundaries
from modules.blocks.model import Model, evaluate
from modules.data.dataset import Dataset
from modules.data.metrics import MetricsRecord, TrainingClock, check_record, print_epoch
from modules.errors import ShapeError
from modules.nmf.nnls import nnls, nnls_columns, nnls_rows
from modules.tensor.ops import Rng, as_tensor, frob_norm
from modules.tensor.optim import optimizer_step

NMF_INITS = ("abs-normal", "identity")
# |N(0, 0.1)| basis initialization
BASIS_INIT_SIGMA = 0.1


@dataclass
class NMFState:
    M: np.ndarray
    S: np.ndarray
    V: np.ndarray
    gamma: float
    rank: int
    position: int


@dataclass
class DeepFactoConfig:
    rank: int = 8
    position: int = 1
    gamma: float = 1.0
    init: str = "abs-normal"
    pretrain_iters: int = 200
    pretrain_tol: float = 1e-3
    # projected-gradient path (next block not affine)
    pg_steps: int = 10
    pg_lr: float = 1e-2

    def validate(self, num_blocks: int):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not 0 <= self.position < num_blocks:
            raise ValueError(
                f"NMF position must lie in [0, {num_blocks - 1}] so a block follows it, "
                f"got {self.position}"
            )
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.init not in NMF_INITS:
            raise ValueError(f"unknown NMF init '{self.init}', expected one of {NMF_INITS}")
        if self.pg_steps < 1 or not self.pg_lr > 0:
            raise ValueError(
                f"pg_steps must be >= 1 and pg_lr positive, got {self.pg_steps} and {self.pg_lr}"
            )


@dataclass
class FactoResult:
    state: CouplingState
    nmf: NMFState
    records: list[MetricsRecord]
    pretrain_residuals: list[float] = field(default_factory=list)


def reshape_activations(Z: np.ndarray) -> np.ndarray:
    """N x C x H x W activations to a C x (N*H*W) matrix (channels as rows)."""
    if Z.ndim != 4:
        raise ShapeError(f"expected rank-4 activations (N, C, H, W), got shape {Z.shape}")
    return np.ascontiguousarray(Z.transpose(1, 0, 2, 3).reshape(Z.shape[1], -1))


def restore_activations(matrix: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Inverse of reshape_activations."""
    n, c, h, w = shape
    if matrix.shape != (c, n * h * w):
        raise ShapeError(f"matrix {matrix.shape} cannot restore activations of shape {shape}")
    return np.ascontiguousarray(matrix.reshape(c, n, h, w).transpose(1, 0, 2, 3))


def as_factor_input(Z: np.ndarray) -> np.ndarray:
    """Fully connected activations pass through; rank-4 ones are reshaped."""
    return reshape_activations(Z) if Z.ndim == 4 else as_tensor(Z)


def init_nmf(
    Z_t: np.ndarray,
    rank: int,
    position: int,
    gamma: float,
    rng: Rng,
    init: str = "abs-normal",
) -> NMFState:
    """M from |N(0, 0.1)| (or a truncated identity), S from one NNLS pass."""
    Z_t = as_factor_input(Z_t)
    m, n = Z_t.shape
    if rank > min(m, n):
        warnings.warn(
            f"NMF rank {rank} exceeds min(m, n) = {min(m, n)}", UserWarning, stacklevel=2
        )
    if init == "identity":
        M = np.eye(m, rank)
    else:
        M = np.abs(rng.normal(BASIS_INIT_SIGMA, (m, rank)))
    S = nnls_columns(M, Z_t).x
    return NMFState(M, S, np.zeros_like(Z_t), float(gamma), rank, position)


def factorization_residual(nmf: NMFState, Z_t: np.ndarray) -> float:
    """||Z_t - M S||_F relative to ||Z_t||_F (absolute when Z_t is zero)."""
    diff = frob_norm(Z_t - nmf.M @ nmf.S)
    scale = frob_norm(Z_t)
    return diff / scale if scale > 0 else diff


def _affine_map(block: Block) -> tuple[np.ndarray, np.ndarray] | None:
    """(W, b) when the block is a chain of Linear layers, else None."""
    if not block.layers or not all(isinstance(layer, Linear) for layer in block.layers):
        return None
    W = np.eye(block.layers[0].in_features)
    b = np.zeros(block.layers[0].in_features)
    for layer in block.layers:
        W = layer.weight @ W
        b = layer.weight @ b
        if layer.bias is not None:
            b = b + layer.bias
    return W, b


def nmf_objective(
    nmf: NMFState,
    Z_t: np.ndarray,
    S: np.ndarray | None = None,
    M: np.ndarray | None = None,
    Z_next: np.ndarray | None = None,
    U_next: np.ndarray | None = None,
    next_block: Block | None = None,
    beta_next: float = 1.0,
) -> float:
    """The terms of the augmented objective that involve M and S."""
    S = nmf.S if S is None else S
    M = nmf.M if M is None else M
    R = Z_t - M @ S + nmf.V
    value = 0.5 * nmf.gamma * float(np.sum(R * R))
    if next_block is not None:
        C = Z_next - block_apply(next_block, S) + U_next
        value += 0.5 * beta_next * float(np.sum(C * C))
    return value


def update_S(
    nmf: NMFState,
    Z_t: np.ndarray,
    Z_next: np.ndarray | None = None,
    U_next: np.ndarray | None = None,
    next_block: Block | None = None,
    beta_next: float = 1.0,
    pg_steps: int = 10,
    pg_lr: float = 1e-2,
) -> np.ndarray:
    """Minimize over S >= 0 with M, V and the blocks fixed.

    Affine next block: exact stacked NNLS per column. Otherwise projected Adam
    steps, each accepted only if the objective does not increase.
    """
    g = np.sqrt(nmf.gamma)
    if next_block is None:
        return nnls_columns(nmf.M, Z_t + nmf.V).x

    affine = _affine_map(next_block)
    if affine is not None:
        W, b = affine
        bt = np.sqrt(beta_next)
        A = np.vstack([bt * W, g * nmf.M])
        B = np.vstack([bt * (Z_next + U_next - b[:, None]), g * (Z_t + nmf.V)])
        return nnls_columns(A, B).x

    def objective(S):
        return nmf_objective(nmf, Z_t, S, None, Z_next, U_next, next_block, beta_next)

    S = nmf.S.copy()
    current = objective(S)
    state = None
    lr = pg_lr
    for _ in range(pg_steps):
        penalty = coupling_penalty(Z_next, S, U_next, next_block, beta_next)
        grad = penalty.grad_prev + nmf.gamma * nmf.M.T @ (nmf.M @ S - Z_t - nmf.V)
        for _attempt in range(8):
            stepped, new_state = optimizer_step("adam", S, grad, state, lr)
            candidate = np.maximum(stepped, 0.0)
            value = objective(candidate)
            if value <= current:
                S, state, current = candidate, new_state, value
                break
            lr *= 0.5
        else:
            break
    return S


def update_M(nmf: NMFState, Z_t: np.ndarray) -> np.ndarray:
    """Row-wise NNLS of (Z_t + V)^T on S^T; the blocks do not depend on M."""
    return nnls_rows(Z_t + nmf.V, nmf.S).x


def update_V(nmf: NMFState, Z_t: np.ndarray) -> np.ndarray:
    """V + Z_t - M S."""
    return nmf.V + Z_t - nmf.M @ nmf.S


def project_test_time(M: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Non-negative scores of one activation column on a trained basis."""
    return nnls(M, as_tensor(z)).x


def pretrain_nmf(
    nmf: NMFState, Z_t: np.ndarray, iters: int, tol: float
) -> list[float]:
    """Alternating NNLS on S and M for the factorization term (blocks frozen)."""
    residuals = []
    for _ in range(iters):
        nmf.S = update_S(nmf, Z_t)
        nmf.M = update_M(nmf, Z_t)
        residuals.append(factorization_residual(nmf, Z_t))
        if residuals[-1] < tol:
            break
    return residuals


def build_facto_blocks(
    sizes: list[int],
    rank: int,
    position: int,
    rng: Rng,
    bias: bool = False,
    init: str = "normal",
) -> list[Block]:
    """One block per Linear; the block after the insert takes `rank` inputs.

    The blocks before the insert end in ReLU so the factorized activations are
    non-negative.
    """
    head: list = []
    if position > 0:
        head = build_mlp(sizes[: position + 1], rng, bias=bias, init=init) + [ReLU()]
    tail = build_mlp([rank, *sizes[position + 1 :]], rng, bias=bias, init=init)

    blocks = split_network(head, default_boundaries(head)) if head else []
    tail_blocks = split_network(tail, default_boundaries(tail))
    for t, block in enumerate([*blocks, *tail_blocks], start=1):
        block.index = t
    return [*blocks, *tail_blocks]


def _factor_input(state: CouplingState, position: int) -> np.ndarray:
    return state.X if position == 0 else state.Z[position - 1]


def update_z_factorized(
    state: CouplingState,
    blocks: list[Block],
    nmf: NMFState,
    t: int,
    z_lr: float,
    optimizer: str = "sgd",
) -> CouplingState:
    """Z_t step on its own coupling term plus the factorization term."""
    beta = state.beta[t - 1]
    own = coupling_penalty(
        state.Z[t - 1], state.block_input(t), state.U[t - 1], blocks[t - 1], beta
    )
    grad = own.grad_z + nmf.gamma * (state.Z[t - 1] - nmf.M @ nmf.S + nmf.V)
    step_z(state, t, grad, z_lr, optimizer, beta + nmf.gamma)
    return state


def facto_cycle(
    state: CouplingState,
    blocks: list[Block],
    nmf: NMFState,
    Y: np.ndarray,
    config: BatchAdmmConfig,
    facto: DeepFactoConfig,
    rng: Rng,
):
    T = state.num_blocks
    t = nmf.position
    z_lrs = per_block(config.z_lr, T, "z_lr")

    for step in range(config.primal_steps):
        if config.repeat == "sweep" or step == 0:
            update_z_terminal(state, blocks, Y, config.loss, z_lrs[T - 1], config.z_optimizer)
            for u in range(T - 1, 0, -1):
                if u == t:
                    update_z_factorized(state, blocks, nmf, u, z_lrs[u - 1], config.z_optimizer)
                else:
                    update_z_inner(state, blocks, u, z_lrs[u - 1], config.z_optimizer)

            Z_t = _factor_input(state, t)
            nmf.S = update_S(
                nmf,
                Z_t,
                state.Z[t],
                state.U[t],
                blocks[t],
                state.beta[t],
                facto.pg_steps,
                facto.pg_lr,
            )
            state.inputs_override[t + 1] = nmf.S
            nmf.M = update_M(nmf, Z_t)
        update_theta_all(state, blocks, config, rng)

    update_duals(state, blocks)
    if t > 0:
        nmf.V = update_V(nmf, state.Z[t - 1])


def deepfacto_train(
    blocks: list[Block],
    train: Dataset,
    config: BatchAdmmConfig,
    facto: DeepFactoConfig,
    rng: Rng,
    test: Dataset | None = None,
) -> FactoResult:
    """Pretrain the NMF insert on frozen blocks, then fine-tune everything."""
    T = len(blocks)
    config.validate(T)
    facto.validate(T)
    t = facto.position

    clock = TrainingClock()
    with clock:
        state = init_coupling(blocks[:t], train.X, config, rng) if t > 0 else None
        Z_t = train.X if t == 0 else state.Z[t - 1]
        nmf = init_nmf(Z_t, facto.rank, t, facto.gamma, rng, facto.init)
        residuals = pretrain_nmf(nmf, Z_t, facto.pretrain_iters, facto.pretrain_tol)

        # the downstream chain starts from the scores
        tail = init_coupling(blocks[t:], nmf.S, config, rng)
        state = CouplingState(
            train.X,
            (state.Z if state else []) + tail.Z,
            (state.U if state else []) + tail.U,
            per_block(config.beta, T, "beta"),
            [None] * T,
            {t + 1: nmf.S},
        )

    records = []
    for epoch in range(1, config.epochs + 1):
        with clock:
            facto_cycle(state, blocks, nmf, train.Y, config, facto, rng)

        model = Model(blocks, nmf)
        train_loss, _ = evaluate(model, train, config.loss)
        _, test_acc = evaluate(model, test if test is not None else train, config.loss)
        record = MetricsRecord(
            epoch=epoch,
            wall_clock_seconds=clock.elapsed,
            train_loss=train_loss,
            test_accuracy=test_acc,
            total_coupling_residual=total_residual(state, blocks)
            + frob_norm(_factor_input(state, t) - nmf.M @ nmf.S),
        )
        check_record("deepfacto", record)
        records.append(record)
        if config.verbose:
            print_epoch("deepfacto", record)

    return FactoResult(state, nmf, records, residuals)


def write_scores_csv(path: Path, S: np.ndarray):
    """Rows are factors, columns are samples; the header lists sample indices."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["factor", *range(S.shape[1])])
        for i, row in enumerate(S):
            writer.writerow([i, *(repr(float(v)) for v in row)])
