"""Synthetic training data and a raw-tensor file loader."""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError
from .model import NetworkSpec

RAW_MAGIC = b"TSRAW001"


def synthetic_batches(net: NetworkSpec, steps: int, seed: int):
    """Separable two-or-more-class data matched to the network's input.

    Each class gets a fixed random template; samples are the template plus
    mild noise, so a correct training loop must steadily reduce the loss.
    """
    first = net.layers[0]
    classes = net.layers[-1].m
    rng = np.random.default_rng(seed)
    shape = (first.n, first.r_in, first.c_in)
    templates = rng.uniform(-1.0, 1.0, size=(classes, *shape)).astype(np.float32)
    for _ in range(steps):
        labels = rng.integers(0, classes, size=net.batch)
        noise = rng.normal(0.0, 0.15, size=(net.batch, *shape)).astype(np.float32)
        yield templates[labels] + noise, labels


def save_raw(path, data: np.ndarray, labels: np.ndarray) -> None:
    """Raw dataset container: magic, dims header, float32 data, int32 labels."""
    data = np.ascontiguousarray(data, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<i4")
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<I", data.ndim))
        f.write(struct.pack(f"<{data.ndim}I", *data.shape))
        f.write(data.tobytes())
        f.write(labels.tobytes())


def load_raw(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(8) != RAW_MAGIC:
            raise ConfigError(f"{path}: not a raw tensor file")
        (ndim,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        n = int(np.prod(shape))
        data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
        labels = np.frombuffer(f.read(4 * shape[0]), dtype="<i4").copy()
    return data, labels


def file_batches(path, net: NetworkSpec, steps: int, seed: int):
    data, labels = load_raw(path)
    if data.ndim != 4:
        raise ConfigError("raw dataset must be (samples, ch, rows, cols)")
    rng = np.random.default_rng(seed)
    n = data.shape[0]
    for _ in range(steps):
        pick = rng.integers(0, n, size=net.batch)
        yield data[pick], labels[pick]


__all__ = ["synthetic_batches", "save_raw", "load_raw", "file_batches"]
