#!/usr/bin/env python3
"""
Synthetic Datasets

Small seeded classification sets for tests and desk-scale runs:

  linear-teacher   labels are the argmax of a hidden random linear map
  two-moons-like   two interleaved half circles, optionally padded with noise dims
  low-rank-nonneg  X = M* S* with known non-negative factors (kept in meta)
"""

from dataclasses import dataclass

import numpy as np

from modules.data.dataset import Dataset
from modules.tensor.ops import Rng, one_hot

SYNTH_KINDS = ("linear-teacher", "two-moons-like", "low-rank-nonneg")


@dataclass
class SynthSpec:
    kind: str = "linear-teacher"
    features: int = 4
    samples: int = 32
    classes: int = 4
    rank: int = 8
    noise: float = 0.0
    # linear-teacher: minimum gap between the top two teacher scores
    margin: float = 0.0

    def validate(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synthetic kind '{self.kind}', expected one of {SYNTH_KINDS}")
        if min(self.features, self.samples, self.rank) < 1 or self.classes < 2:
            raise ValueError("features, samples and rank must be >= 1 and classes >= 2")
        if self.kind == "two-moons-like" and (self.classes != 2 or self.features < 2):
            raise ValueError("two-moons-like needs classes=2 and features >= 2")
        if self.noise < 0 or self.margin < 0:
            raise ValueError("noise and margin must be non-negative")


def _linear_teacher(spec: SynthSpec, rng: Rng) -> Dataset:
    W = rng.normal(1.0, (spec.classes, spec.features))
    columns: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    have = 0
    while have < spec.samples:
        X = rng.normal(1.0, (spec.features, spec.samples))
        scores = W @ X
        top2 = np.sort(scores, axis=0)[-2:]
        keep = (top2[1] - top2[0]) >= spec.margin
        X = X[:, keep]
        columns.append(X)
        labels.append(np.argmax(W @ X, axis=0))
        have += X.shape[1]

    X = np.concatenate(columns, axis=1)[:, : spec.samples]
    y = np.concatenate(labels)[: spec.samples]
    if spec.noise > 0:
        X = X + rng.normal(spec.noise, X.shape)
    return Dataset(X, one_hot(y, spec.classes), name="linear-teacher", meta={"W": W})


def _two_moons(spec: SynthSpec, rng: Rng) -> Dataset:
    n = spec.samples
    y = np.arange(n) % 2
    angle = rng.uniform(0.0, np.pi, (n,))
    x0 = np.where(y == 0, np.cos(angle), 1.0 - np.cos(angle))
    x1 = np.where(y == 0, np.sin(angle), 0.5 - np.sin(angle))
    X = np.zeros((spec.features, n))
    X[0], X[1] = x0, x1
    if spec.noise > 0:
        X = X + rng.normal(spec.noise, X.shape)
    order = rng.permutation(n)
    return Dataset(X[:, order], one_hot(y[order], 2), name="two-moons-like")


def _low_rank_nonneg(spec: SynthSpec, rng: Rng) -> Dataset:
    """Labels are the argmax of a random projection of the true scores S*."""
    M = rng.uniform(0.0, 1.0, (spec.features, spec.rank))
    # sparse scores: roughly half the entries are zero
    S = np.maximum(rng.uniform(-1.0, 1.0, (spec.rank, spec.samples)), 0.0)
    P = rng.normal(1.0, (spec.classes, spec.rank))
    y = np.argmax(P @ S, axis=0)
    X = M @ S
    if spec.noise > 0:
        X = np.maximum(X + rng.normal(spec.noise, X.shape), 0.0)
    return Dataset(X, one_hot(y, spec.classes), name="low-rank-nonneg", meta={"M": M, "S": S})


def synth_gen(spec: SynthSpec, rng: Rng) -> Dataset:
    spec.validate()
    if spec.kind == "linear-teacher":
        return _linear_teacher(spec, rng)
    if spec.kind == "two-moons-like":
        return _two_moons(spec, rng)
    return _low_rank_nonneg(spec, rng)


def train_test_split(data: Dataset, n_test: int, rng: Rng) -> tuple[Dataset, Dataset]:
    """Seeded random split; the last n_test shuffled columns become the test set."""
    if not 0 < n_test < data.n_samples:
        raise ValueError(f"n_test must lie in (0, {data.n_samples}), got {n_test}")
    order = rng.permutation(data.n_samples)
    cut = data.n_samples - n_test
    return data.subset(order[:cut], "train"), data.subset(order[cut:], "test")
