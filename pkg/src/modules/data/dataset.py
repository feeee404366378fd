#!/usr/bin/env python3
"""
Datasets

Column-sample datasets (X: M x N, Y: C x N one-hot) and seeded stratified
subsets.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from modules.errors import DataError
from modules.tensor.ops import Rng, as_tensor


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    name: str = "dataset"
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = as_tensor(self.X)
        self.Y = as_tensor(self.Y)
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[1] != self.Y.shape[1]:
            raise DataError(
                f"{self.name}: X {self.X.shape} and Y {self.Y.shape} do not pair up column-wise"
            )
        if self.Y.size and not (
            np.all((self.Y == 0.0) | (self.Y == 1.0)) and np.all(self.Y.sum(axis=0) == 1.0)
        ):
            raise DataError(f"{self.name}: label columns must be one-hot")

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return self.Y.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.Y, axis=0)

    def subset(self, indices: np.ndarray, split: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.X[:, indices],
            self.Y[:, indices],
            name=self.name,
            split=split or self.split,
            meta=dict(self.meta),
        )


def stratified_subset(data: Dataset, n: int, rng: Rng) -> Dataset:
    """Draw n columns keeping class proportions (largest-remainder rounding)."""
    if n <= 0 or n >= data.n_samples:
        return data

    labels = data.labels
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * (n / data.n_samples)
    quota = np.floor(exact).astype(np.int64)
    remainder = n - int(quota.sum())
    # ties broken by class order
    order = np.argsort(-(exact - quota), kind="stable")
    quota[order[:remainder]] += 1

    picked = []
    for cls, take in zip(classes, quota):
        members = np.flatnonzero(labels == cls)
        picked.append(members[rng.permutation(members.size)[:take]])
    indices = np.sort(np.concatenate(picked))
    return data.subset(indices)


def save_npz(path: Path, data: Dataset):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, X=data.X, Y=data.Y, name=np.array(data.name), split=np.array(data.split))


def load_npz(path: Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with np.load(path) as archive:
        return Dataset(
            archive["X"],
            archive["Y"],
            name=str(archive["name"]),
            split=str(archive["split"]),
        )
