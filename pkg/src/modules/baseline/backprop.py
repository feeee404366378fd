#!/usr/bin/env python3
"""
Backpropagation Baseline

End-to-end training of the whole network as one block with minibatch SGD or
Adam. There are no coupling variables, so the recorded residual is 0.
"""

from dataclasses import dataclass

from modules.block_admm.batch import minibatches
from modules.blocks.block import Block, apply_gradients, block_backward, block_forward
from modules.blocks.layers import Layer
from modules.blocks.model import Model, evaluate
from modules.data.dataset import Dataset
from modules.data.metrics import MetricsRecord, TrainingClock, check_record, print_epoch
from modules.losses.objectives import LOSS_KINDS, loss_grad
from modules.tensor.ops import Rng
from modules.tensor.optim import OPTIMIZERS


@dataclass
class BaselineConfig:
    optimizer: str = "adam"
    lr: float = 5e-3
    batch_size: int = 64
    loss: str = "mse"
    epochs: int = 100
    verbose: bool = False

    def validate(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


def backprop_step(block: Block, X, Y, config: BaselineConfig) -> Block:
    """One gradient step on the minibatch (X, Y) through the single block."""
    out, cache = block_forward(block, X)
    grads, _ = block_backward(block, cache, loss_grad(config.loss, Y, out))
    apply_gradients(block, grads, config.lr, config.optimizer)
    return block


def sgd_adam_baseline_train(
    layers: list[Layer],
    train: Dataset,
    config: BaselineConfig,
    rng: Rng,
    test: Dataset | None = None,
) -> tuple[Model, list[MetricsRecord]]:
    config.validate()
    block = Block(layers, index=1)
    model = Model([block])
    method = config.optimizer

    clock = TrainingClock()
    records = []
    for epoch in range(1, config.epochs + 1):
        with clock:
            for idx in minibatches(train.n_samples, config.batch_size, rng):
                backprop_step(block, train.X[:, idx], train.Y[:, idx], config)

        train_loss, _ = evaluate(model, train, config.loss)
        _, test_acc = evaluate(model, test if test is not None else train, config.loss)
        record = MetricsRecord(
            epoch=epoch,
            wall_clock_seconds=clock.elapsed,
            train_loss=train_loss,
            test_accuracy=test_acc,
            total_coupling_residual=0.0,
        )
        check_record(method, record)
        records.append(record)
        if config.verbose:
            print_epoch(method, record)
    return model, records
