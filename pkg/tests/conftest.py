import numpy as np
import pytest

from modules.blocks.block import split_network
from modules.blocks.layers import Linear, build_mlp, default_boundaries
from modules.data.dataset import Dataset
from modules.data.synth import SynthSpec, synth_gen
from modules.tensor.ops import Rng, one_hot


def _make_blocks(sizes, seed=0, activation="relu", bias=False, init="normal"):
    layers = build_mlp(sizes, Rng(seed), bias=bias, init=init, activation=activation)
    return split_network(layers, default_boundaries(layers))


@pytest.fixture
def make_blocks():
    """Factory: one block per Linear layer."""
    return _make_blocks


@pytest.fixture
def rng():
    return Rng(0)


@pytest.fixture
def toy_data():
    """Linear-teacher set with d=4, N=32, 4 classes."""
    return synth_gen(SynthSpec("linear-teacher", 4, 32, 4), Rng(1))


@pytest.fixture
def linear_toy(toy_data):
    """2-block linear network on the toy data."""
    return _make_blocks([4, 4, 4], seed=2, activation="linear"), toy_data


@pytest.fixture
def balanced_data():
    """Random features with exactly balanced labels over 10 classes."""
    gen = np.random.default_rng(7)
    labels = np.arange(1000) % 10
    return Dataset(gen.normal(size=(20, 1000)), one_hot(labels, 10), name="balanced")


def _identity_chain(width: int, count: int):
    layers = [Linear(np.eye(width)) for _ in range(count)]
    return split_network(layers, list(range(1, count)))


@pytest.fixture
def identity_chain():
    """Factory: blocks of identity Linear layers."""
    return _identity_chain
