#!/usr/bin/env python3
"""
Blocks

A block is a contiguous run of layers with its own parameters. Forward and
backward passes are strictly local: block_backward only ever sees the cache of
its own forward call, so no gradient crosses a block boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from modules.blocks.layers import Layer, Linear
from modules.errors import CacheError, ShapeError
from modules.tensor.optim import AdamState, optimizer_step

ParamKey = tuple[int, str]


@dataclass
class BlockCache:
    """Per-layer inputs saved by block_forward."""

    inputs: list[np.ndarray]
    version: int
    block_id: int


@dataclass
class Block:
    layers: list[Layer]
    index: int = 1
    adam: dict[ParamKey, AdamState] = field(default_factory=dict)
    version: int = 0

    def __post_init__(self):
        width = None
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, Linear):
                continue
            if width is not None and layer.in_features != width:
                raise ShapeError(
                    f"block {self.index}: layer {i} expects {layer.in_features} inputs "
                    f"but the previous layer produces {width}"
                )
            width = layer.out_features

    @property
    def in_features(self) -> int | None:
        for layer in self.layers:
            if isinstance(layer, Linear):
                return layer.in_features
        return None

    @property
    def out_features(self) -> int | None:
        for layer in reversed(self.layers):
            if isinstance(layer, Linear):
                return layer.out_features
        return None

    def parameter_keys(self) -> list[ParamKey]:
        return [
            (i, name)
            for i, layer in enumerate(self.layers)
            for name in layer.parameter_names()
        ]

    def get_parameter(self, key: ParamKey) -> np.ndarray:
        i, name = key
        return getattr(self.layers[i], name)

    def set_parameter(self, key: ParamKey, value: np.ndarray):
        i, name = key
        setattr(self.layers[i], name, value)
        self.version += 1

    def parameter_count(self) -> int:
        return sum(self.get_parameter(key).size for key in self.parameter_keys())


def block_forward(block: Block, x: np.ndarray) -> tuple[np.ndarray, BlockCache]:
    """Apply the block to a d x N input, keeping each layer's input."""
    if x.ndim != 2:
        raise ShapeError(f"block {block.index} expects a 2-D input, got {x.shape}")
    if block.in_features is not None and x.shape[0] != block.in_features:
        raise ShapeError(
            f"block {block.index} expects {block.in_features} input rows, got {x.shape[0]}"
        )

    inputs = []
    out = x
    for layer in block.layers:
        inputs.append(out)
        out = layer.forward(out)
    return out, BlockCache(inputs, block.version, id(block))


def lipschitz_bound(block: Block) -> float:
    """Product of the spectral norms of the block's Linear weights.

    ReLU is 1-Lipschitz, so this bounds ||block(a) - block(b)|| / ||a - b||.
    """
    bound = 1.0
    for layer in block.layers:
        if isinstance(layer, Linear):
            bound *= float(np.linalg.norm(layer.weight, 2))
    return bound


def block_apply(block: Block, x: np.ndarray) -> np.ndarray:
    return block_forward(block, x)[0]


def block_backward(
    block: Block, cache: BlockCache, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients of <upstream, block(input)>.

    Returns parameter gradients in parameter_keys() order and the input gradient.
    """
    if cache is None or len(cache.inputs) != len(block.layers):
        raise CacheError(f"block {block.index}: missing or foreign forward cache")
    if cache.block_id != id(block) or cache.version != block.version:
        raise CacheError(
            f"block {block.index}: cache is stale (cached version {cache.version}, "
            f"block version {block.version})"
        )

    grads_per_layer: list[list[np.ndarray]] = [[] for _ in block.layers]
    grad = upstream
    for i in range(len(block.layers) - 1, -1, -1):
        grads_per_layer[i], grad = block.layers[i].backward(cache.inputs[i], grad)

    grads = [g for layer_grads in grads_per_layer for g in layer_grads]
    return grads, grad


def apply_gradients(
    block: Block, grads: list[np.ndarray], lr: float, optimizer: str = "adam"
):
    """Optimizer step on every parameter of the block, in place."""
    for key, grad in zip(block.parameter_keys(), grads):
        param, state = optimizer_step(
            optimizer, block.get_parameter(key), grad, block.adam.get(key), lr
        )
        if state is not None:
            block.adam[key] = state
        block.set_parameter(key, param)


def straight_through_forward(
    blocks: list[Block], x: np.ndarray, capture: bool = False
) -> np.ndarray | tuple[np.ndarray, list[np.ndarray]]:
    """Inference path: block_T(...block_1(x)) with no decoupling variables.

    With capture=True also returns every block output.
    """
    outputs = []
    out = x
    for block in blocks:
        if block.in_features is not None and out.shape[0] != block.in_features:
            raise ShapeError(
                f"dimension chain breaks at block {block.index}: "
                f"got {out.shape[0]} rows, block expects {block.in_features}"
            )
        out = block_apply(block, out)
        outputs.append(out)
    if capture:
        return out, outputs
    return out


def split_network(layers: list[Layer], boundaries: list[int]) -> list[Block]:
    """Partition a layer list into blocks; each boundary starts a new block."""
    bounds = list(boundaries)
    if any(b <= 0 or b >= len(layers) for b in bounds):
        raise ValueError(f"boundaries {bounds} out of range for {len(layers)} layers")
    if any(a >= b for a, b in zip(bounds, bounds[1:])):
        raise ValueError(f"boundaries must be strictly increasing, got {bounds}")

    edges = [0, *bounds, len(layers)]
    return [
        Block(list(layers[start:stop]), index=t)
        for t, (start, stop) in enumerate(zip(edges[:-1], edges[1:]), start=1)
    ]
