"""Synthetic Gaussian-cluster datasets and an IDX (MNIST-style) binary loader."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numcore import Rng, normal_sample

__all__ = [
    "ModeSpec",
    "LabeledBatch",
    "IdxFormatError",
    "two_mode_specs",
    "gen_two_mode",
    "gen_k_mode",
    "idx_load",
    "TWO_MODE_RADIUS",
    "TWO_MODE_ANGLES",
    "TWO_MODE_SIGMA",
]

# two well-separated clusters on a ring of radius 5, at angles 0 and 4 radians
TWO_MODE_RADIUS = 5.0
TWO_MODE_ANGLES = (0.0, 4.0)
TWO_MODE_SIGMA = 0.5


@dataclass(frozen=True)
class ModeSpec:
    """One isotropic Gaussian cluster: center, per-axis std, class label."""

    center: tuple
    sigma: float
    label: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class LabeledBatch:
    """n samples (rows of x) with integer class labels y in [0, K)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ValueError(
                f"inconsistent batch shapes x={self.x.shape} y={self.y.shape}")

    def __len__(self):
        return len(self.y)


def two_mode_specs() -> list[ModeSpec]:
    r = TWO_MODE_RADIUS
    return [
        ModeSpec(center=(r * np.cos(a), r * np.sin(a)), sigma=TWO_MODE_SIGMA, label=i)
        for i, a in enumerate(TWO_MODE_ANGLES)
    ]


def gen_k_mode(specs: list[ModeSpec], n: int, rng: Rng) -> LabeledBatch:
    """Sample n points from a list of Gaussian modes.

    Labels are assigned round-robin before the noise draw, so class counts are
    balanced within one sample. Mode labels must be consecutive from 0.
    """
    if not specs:
        raise ValueError("specs must be non-empty")
    if n < len(specs):
        raise ValueError(f"need n >= {len(specs)} samples for {len(specs)} modes")
    labels = sorted(s.label for s in specs)
    if labels != list(range(len(specs))):
        raise ValueError(f"mode labels must be 0..K-1, got {labels}")
    by_label = sorted(specs, key=lambda s: s.label)
    centers = np.array([s.center for s in by_label], dtype=np.float64)
    sigmas = np.array([s.sigma for s in by_label], dtype=np.float64)

    y = np.arange(n, dtype=np.int64) % len(specs)
    eps = normal_sample(rng, n, centers.shape[1])
    x = centers[y] + sigmas[y, None] * eps
    return LabeledBatch(x=x, y=y)


def gen_two_mode(n: int, rng: Rng) -> LabeledBatch:
    """The standard two-cluster dataset used by the demos and tests."""
    if n < 2:
        raise ValueError("need at least one sample per mode")
    return gen_k_mode(two_mode_specs(), n, rng)


# ---------------------------------------------------------------------------
# IDX binary format (big-endian): u32 magic, u32 dim sizes, then u8 payload.
# Images use magic 0x00000803 with 3 dims, labels 0x00000801 with 1 dim.

IDX_MAGIC = {"images": 0x00000803, "labels": 0x00000801}
_IDX_NDIMS = {"images": 3, "labels": 1}


class IdxFormatError(ValueError):
    """Malformed IDX file (wrong magic or truncated payload)."""


def idx_load(path, kind: str):
    """Load an IDX file.

    ``kind='images'`` returns an (n, rows*cols) float64 tensor with pixels
    rescaled to [-1, 1] via x/127.5 - 1; ``kind='labels'`` returns a 1-D
    int64 array.
    """
    if kind not in IDX_MAGIC:
        raise ValueError(f"kind must be 'images' or 'labels', got {kind!r}")
    with open(path, "rb") as f:
        raw = f.read()
    header_len = 4 * (1 + _IDX_NDIMS[kind])
    if len(raw) < header_len:
        raise IdxFormatError(
            f"{path}: header truncated ({len(raw)} bytes, need {header_len})")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != IDX_MAGIC[kind]:
        raise IdxFormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected "
            f"0x{IDX_MAGIC[kind]:08x} for {kind}")
    dims = struct.unpack(f">{_IDX_NDIMS[kind]}I", raw[4:header_len])
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    expected = int(np.prod(dims, dtype=np.int64))
    if payload.size != expected:
        raise IdxFormatError(
            f"{path}: payload length {payload.size} != expected {expected} "
            f"for dims {dims}")
    if kind == "labels":
        return payload.astype(np.int64)
    n, r, c = dims
    return payload.astype(np.float64).reshape(n, r * c) / 127.5 - 1.0
