#!/usr/bin/env python3
"""
Network Layers

Fully connected and ReLU layers with local forward/backward passes, and a
builder for plain multi-layer perceptrons.
"""

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from modules.errors import ShapeError
from modules.tensor.ops import Rng, as_tensor, init_normal, init_uniform, relu, relu_mask

INIT_KINDS = ("normal", "uniform-small")
ACTIVATIONS = ("relu", "linear")

# U(0, 1e-4), the pathological small init of the vanishing-gradient runs
SMALL_INIT_HIGH = 1e-4


@dataclass
class Linear:
    """y = W x (+ b), applied column-wise."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    kind: ClassVar[str] = "linear"

    def __post_init__(self):
        self.weight = as_tensor(self.weight)
        if self.weight.ndim != 2:
            raise ShapeError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None:
            self.bias = as_tensor(self.bias)
            if self.bias.shape != (self.out_features,):
                raise ShapeError(
                    f"bias shape {self.bias.shape} does not match out size {self.out_features}"
                )

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def parameter_names(self) -> list[str]:
        return ["weight"] if self.bias is None else ["weight", "bias"]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[0] != self.in_features:
            raise ShapeError(
                f"linear layer expects {self.in_features} input rows, got shape {x.shape}"
            )
        out = self.weight @ x
        if self.bias is not None:
            out = out + self.bias[:, None]
        return out

    def backward(
        self, x: np.ndarray, upstream: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        grads = [upstream @ x.T]
        if self.bias is not None:
            grads.append(upstream.sum(axis=1))
        return grads, self.weight.T @ upstream


@dataclass
class ReLU:
    kind: ClassVar[str] = "relu"

    def parameter_names(self) -> list[str]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        return relu(x)

    def backward(
        self, x: np.ndarray, upstream: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        return [], upstream * relu_mask(x)


Layer = Linear | ReLU


def init_linear(
    in_features: int,
    out_features: int,
    rng: Rng,
    bias: bool = False,
    init: str = "normal",
) -> Linear:
    """Create a Linear layer.

    `normal` draws N(0, 1/in_features); `uniform-small` draws U(0, 1e-4) for
    weights and bias alike.
    """
    shape = (out_features, in_features)
    if init == "normal":
        weight = init_normal(shape, 1.0 / np.sqrt(in_features), rng)
        b = np.zeros(out_features) if bias else None
    elif init == "uniform-small":
        weight = init_uniform(shape, 0.0, SMALL_INIT_HIGH, rng)
        b = init_uniform((out_features,), 0.0, SMALL_INIT_HIGH, rng) if bias else None
    else:
        raise ValueError(f"unknown init '{init}', expected one of {INIT_KINDS}")
    return Linear(weight, b)


def build_mlp(
    sizes: list[int],
    rng: Rng,
    bias: bool = False,
    init: str = "normal",
    activation: str = "relu",
) -> list[Layer]:
    """Linear/ReLU stack for layer sizes like [784, 128, 128, 10].

    The final Linear has no activation (its output is the prediction).
    `activation="linear"` drops the hidden ReLUs.
    """
    if len(sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {sizes}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{activation}', expected one of {ACTIVATIONS}")

    layers: list[Layer] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(init_linear(fan_in, fan_out, rng, bias=bias, init=init))
        if i < len(sizes) - 2 and activation == "relu":
            layers.append(ReLU())
    return layers


def default_boundaries(layers: list[Layer]) -> list[int]:
    """One block per Linear layer (with its trailing activation)."""
    linear_positions = [i for i, layer in enumerate(layers) if isinstance(layer, Linear)]
    return linear_positions[1:]
