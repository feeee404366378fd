#!/usr/bin/env python3
"""
Model Checkpoints

Container layout (ASCII header lines, then raw payload):

    BLOCKADMM v1
    blocks <T>
    block <t> <layer count>
    linear <out> <in> <has bias 0|1>
    relu
    ...
    nmf <position> <m> <rank>          (or: nmf none)
    payload <float count>
    <float count little-endian float64 values>

Payload order: per block, per layer, weight (row-major) then bias; then the
NMF basis M (row-major).
"""

from pathlib import Path

import numpy as np

from modules.blocks.block import Block
from modules.blocks.layers import Linear, ReLU
from modules.blocks.model import Model
from modules.errors import CheckpointError, CheckpointLengthError, CheckpointVersionError
from modules.nmf.facto import NMFState

MAGIC = "BLOCKADMM"
VERSION = "v1"
PAYLOAD_DTYPE = np.dtype("<f8")


def _structure(model: Model) -> tuple[list[str], list[np.ndarray]]:
    lines = [f"{MAGIC} {VERSION}", f"blocks {len(model.blocks)}"]
    arrays = []
    for block in model.blocks:
        lines.append(f"block {block.index} {len(block.layers)}")
        for layer in block.layers:
            if isinstance(layer, Linear):
                has_bias = int(layer.bias is not None)
                lines.append(f"linear {layer.out_features} {layer.in_features} {has_bias}")
                arrays.append(layer.weight)
                if layer.bias is not None:
                    arrays.append(layer.bias)
            else:
                lines.append("relu")
    if model.nmf is None:
        lines.append("nmf none")
    else:
        m, r = model.nmf.M.shape
        lines.append(f"nmf {model.nmf.position} {m} {r}")
        arrays.append(model.nmf.M)
    return lines, arrays


def save_model(path: Path, model: Model):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines, arrays = _structure(model)
    payload = (
        np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)
    ).astype(PAYLOAD_DTYPE)
    lines.append(f"payload {payload.size}")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(payload.tobytes())


class _Reader:
    """Sequential access to header lines and payload floats."""

    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.offset = 0
        self.source = source
        self.values = None
        self.cursor = 0

    def line(self) -> list[str]:
        end = self.raw.find(b"\n", self.offset)
        if end < 0:
            raise CheckpointError(f"{self.source}: header ends unexpectedly")
        text = self.raw[self.offset : end].decode("ascii", errors="replace")
        self.offset = end + 1
        return text.split()

    def take(self, count: int) -> np.ndarray:
        if self.cursor + count > self.values.size:
            raise CheckpointLengthError(
                f"{self.source}: structure needs more than the {self.values.size} payload floats"
            )
        out = self.values[self.cursor : self.cursor + count].astype(np.float64)
        self.cursor += count
        return out


def _expect(tokens: list[str], keyword: str, arity: int, source: str) -> list[int]:
    if len(tokens) != arity + 1 or tokens[0] != keyword:
        raise CheckpointError(f"{source}: expected '{keyword}' line, got '{' '.join(tokens)}'")
    try:
        return [int(t) for t in tokens[1:]]
    except ValueError as e:
        raise CheckpointError(f"{source}: malformed '{keyword}' line") from e


def load_model(path: Path) -> Model:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), str(path))

    header = reader.line()
    if len(header) != 2 or header[0] != MAGIC:
        raise CheckpointError(f"{path}: not a model container")
    if header[1] != VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported version '{header[1]}', expected {VERSION}"
        )

    (num_blocks,) = _expect(reader.line(), "blocks", 1, str(path))
    layout = []
    for _ in range(num_blocks):
        index, count = _expect(reader.line(), "block", 2, str(path))
        layers = []
        for _ in range(count):
            tokens = reader.line()
            if tokens == ["relu"]:
                layers.append(None)
            else:
                layers.append(tuple(_expect(tokens, "linear", 3, str(path))))
        layout.append((index, layers))

    nmf_tokens = reader.line()
    nmf_shape = None if nmf_tokens == ["nmf", "none"] else _expect(nmf_tokens, "nmf", 3, str(path))
    (declared,) = _expect(reader.line(), "payload", 1, str(path))

    body = reader.raw[reader.offset :]
    if len(body) != declared * PAYLOAD_DTYPE.itemsize:
        raise CheckpointLengthError(
            f"{path}: payload declares {declared} floats "
            f"({declared * PAYLOAD_DTYPE.itemsize} bytes) but holds {len(body)} bytes"
        )
    reader.values = np.frombuffer(body, dtype=PAYLOAD_DTYPE)

    blocks = []
    for index, specs in layout:
        layers = []
        for spec in specs:
            if spec is None:
                layers.append(ReLU())
                continue
            out_f, in_f, has_bias = spec
            weight = reader.take(out_f * in_f).reshape(out_f, in_f)
            bias = reader.take(out_f) if has_bias else None
            layers.append(Linear(weight, bias))
        blocks.append(Block(layers, index=index))

    nmf = None
    if nmf_shape is not None:
        position, m, r = nmf_shape
        M = reader.take(m * r).reshape(m, r)
        nmf = NMFState(M, np.zeros((r, 0)), np.zeros((m, 0)), 1.0, r, position)

    if reader.cursor != declared:
        raise CheckpointLengthError(
            f"{path}: structure uses {reader.cursor} of {declared} payload floats"
        )
    return Model(blocks, nmf)
