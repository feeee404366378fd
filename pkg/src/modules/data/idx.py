#!/usr/bin/env python3
"""
IDX Reader

Reads image/label file pairs in the IDX container (MNIST, Fashion-MNIST).
Header: 4-byte big-endian magic, then one big-endian uint32 per dimension,
then unsigned bytes. Files ending in .gz are decompressed transparently.
"""

import gzip
from pathlib import Path

import numpy as np

from modules.data.dataset import Dataset
from modules.errors import (
    DataError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
)
from modules.tensor.ops import one_hot

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(raw: bytes, expected_magic: int, source: str = "<bytes>") -> np.ndarray:
    """Decode one IDX payload to a uint8 array of the declared shape."""
    if len(raw) < 4:
        raise IdxTruncatedError(f"{source}: expected at least 4 header bytes, got {len(raw)}")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise IdxMagicError(
            f"{source}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )

    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{source}: expected {header} header bytes, got {len(raw)}")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype=">u4", count=ndim, offset=4))

    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise IdxTruncatedError(
            f"{source}: expected {expected} bytes for shape {dims}, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def load_idx(images_path: Path, labels_path: Path, split: str = "train") -> Dataset:
    """Images become columns scaled to [0, 1]; labels become one-hot (C=10)."""
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC, str(images_path))
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} holds {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    if labels.size and labels.max() >= NUM_CLASSES:
        raise DataError(f"{labels_path}: label {int(labels.max())} outside 0..{NUM_CLASSES - 1}")

    X = images.reshape(images.shape[0], -1).T.astype(np.float64) / 255.0
    Y = one_hot(labels, NUM_CLASSES)
    return Dataset(X, Y, name=Path(images_path).name, split=split)
