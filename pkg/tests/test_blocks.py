import numpy as np
import pytest
from numpy.testing import assert_allclose

from modules.blocks.block import (
    Block,
    apply_gradients,
    block_backward,
    block_forward,
    split_network,
    straight_through_forward,
)
from modules.blocks.layers import Linear, ReLU, build_mlp, default_boundaries
from modules.blocks.model import Model
from modules.errors import CacheError, ShapeError
from modules.tensor.ops import Rng, finite_diff_grad

PATTERNS = (("L",), ("L", "R"), ("L", "R", "L"))


def _random_block(gen: np.random.Generator, pattern) -> tuple[Block, np.ndarray, np.ndarray]:
    """Block, input and upstream with no pre-activation near the ReLU kink."""
    while True:
        dims = gen.integers(1, 17, size=3)
        n = int(gen.integers(1, 9))
        layers = []
        width = int(dims[0])
        for i, kind in enumerate(pattern):
            if kind == "L":
                out = int(dims[1 + min(i, 1)])
                bias = gen.normal(size=out) if gen.random() < 0.5 else None
                layers.append(Linear(gen.normal(size=(out, width)), bias))
                width = out
            else:
                layers.append(ReLU())
        block = Block(layers)
        x = gen.normal(size=(int(dims[0]), n))
        _, cache = block_forward(block, x)
        relu_inputs = [
            cache.inputs[i] for i, layer in enumerate(layers) if isinstance(layer, ReLU)
        ]
        if all(np.min(np.abs(a)) >= 1e-3 for a in relu_inputs):
            return block, x, gen.normal(size=(width, n))


class TestBlockGradients:
    @pytest.mark.parametrize("pattern", PATTERNS)
    def test_matches_finite_differences(self, pattern):
        gen = np.random.default_rng(len(pattern))
        for _ in range(40):
            block, x, upstream = _random_block(gen, pattern)
            out, cache = block_forward(block, x)
            grads, grad_x = block_backward(block, cache, upstream)

            def inner(z):
                return float(np.sum(upstream * block_forward(block, z)[0]))

            assert_allclose(grad_x, finite_diff_grad(inner, x), rtol=1e-5, atol=1e-8)
            for key, grad in zip(block.parameter_keys(), grads):
                original = block.get_parameter(key)

                def by_param(p, key=key):
                    layer = block.layers[key[0]]
                    saved = getattr(layer, key[1])
                    setattr(layer, key[1], p)
                    value = float(np.sum(upstream * layer_chain(block, x)))
                    setattr(layer, key[1], saved)
                    return value

                assert_allclose(
                    grad, finite_diff_grad(by_param, original), rtol=1e-5, atol=1e-8
                )


def layer_chain(block: Block, x: np.ndarray) -> np.ndarray:
    out = x
    for layer in block.layers:
        out = layer.forward(out)
    return out


class TestBlockCache:
    def test_stale_cache_is_refused(self):
        block = Block([Linear(np.eye(2))])
        _, cache = block_forward(block, np.ones((2, 1)))
        apply_gradients(block, [np.ones((2, 2))], 0.1, optimizer="sgd")
        with pytest.raises(CacheError, match="stale"):
            block_backward(block, cache, np.ones((2, 1)))

    def test_foreign_cache_is_refused(self):
        a = Block([Linear(np.eye(2))])
        b = Block([Linear(np.eye(2))])
        _, cache = block_forward(a, np.ones((2, 1)))
        with pytest.raises(CacheError):
            block_backward(b, cache, np.ones((2, 1)))

    def test_missing_cache(self):
        with pytest.raises(CacheError):
            block_backward(Block([Linear(np.eye(2))]), None, np.ones((2, 1)))


class TestSplitNetwork:
    def test_default_is_one_block_per_linear(self):
        layers = build_mlp([4, 5, 6, 3], Rng(0))
        blocks = split_network(layers, default_boundaries(layers))
        assert [b.index for b in blocks] == [1, 2, 3]
        assert [len(b.layers) for b in blocks] == [2, 2, 1]
        assert blocks[-1].out_features == 3

    @pytest.mark.parametrize("bounds", [[0], [5], [2, 2], [3, 1]])
    def test_invalid_boundaries(self, bounds):
        with pytest.raises(ValueError):
            split_network(build_mlp([4, 5, 6, 3], Rng(0)), bounds)

    def test_chain_mismatch_inside_block(self):
        with pytest.raises(ShapeError, match="layer 1"):
            Block([Linear(np.ones((3, 2))), Linear(np.ones((2, 4)))])

    def test_chain_mismatch_between_blocks(self):
        blocks = [Block([Linear(np.ones((3, 2)))]), Block([Linear(np.ones((2, 4))), ], index=2)]
        with pytest.raises(ShapeError, match="block 2"):
            straight_through_forward(blocks, np.ones((2, 1)))

    def test_straight_through_equals_layer_stack(self, make_blocks):
        blocks = make_blocks([5, 7, 4, 3], seed=4, bias=True)
        x = np.random.default_rng(0).normal(size=(5, 6))
        layers = [layer for block in blocks for layer in block.layers]
        expected = x
        for layer in layers:
            expected = layer.forward(expected)
        assert_allclose(Model(blocks).predict(x), expected)
