#!/usr/bin/env python3
"""
Trained Model

Blocks plus an optional NMF insert. Prediction is the straight-through path;
with an insert after block t the activations are replaced by their
non-negative projection on the basis M before block t+1.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from modules.blocks.block import Block, block_apply, straight_through_forward
from modules.losses.objectives import accuracy, loss_value
from modules.nmf.nnls import nnls_columns

if TYPE_CHECKING:
    from modules.data.dataset import Dataset
    from modules.nmf.facto import NMFState


@dataclass
class Model:
    blocks: list[Block]
    nmf: "NMFState | None" = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.nmf is None:
            return straight_through_forward(self.blocks, X)

        out = X
        if self.nmf.position == 0:
            out = nnls_columns(self.nmf.M, out).x
        for t, block in enumerate(self.blocks, start=1):
            out = block_apply(block, out)
            if t == self.nmf.position:
                out = nnls_columns(self.nmf.M, out).x
        return out

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Non-negative scores S fed past the NMF insert."""
        if self.nmf is None:
            raise ValueError("model has no NMF insert")
        out = X
        for block in self.blocks[: self.nmf.position]:
            out = block_apply(block, out)
        return nnls_columns(self.nmf.M, out).x


def evaluate(model: Model, data: "Dataset", loss: str) -> tuple[float, float]:
    """(loss, accuracy) of the model on a dataset."""
    Z = model.predict(data.X)
    return loss_value(loss, data.Y, Z), accuracy(data.Y, Z)
