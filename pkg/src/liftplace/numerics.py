"""Dense float64 tensors, deterministic RNG streams, and moment primitives.

Conventions used throughout the package:

* A "tensor" is a C-contiguous ``numpy.ndarray`` of dtype float64. Row-major
  flat order is load-bearing: the grouping code addresses elements by flat
  index, and the JSON serialization stores data in that order.
* Statistical moments use the population convention (divisor ``n``). The
  regression coefficients are ratios of such moments, so the divisor cancels
  in the slope; using ``n`` everywhere keeps the intercept consistent with
  the slope.
* Randomness comes from :class:`Rng`, a thin wrapper around numpy's PCG64
  bit generator. Identical seeds give identical draw sequences on every
  platform. Derived streams are built from ``SeedSequence`` spawn keys, so a
  single root seed reproducibly determines every draw in a run.
"""

from __future__ import annotations

import json
import zlib
from typing import Sequence

import numpy as np

__all__ = [
    "Rng",
    "as_tensor",
    "randn",
    "moments",
    "tensor_to_json",
    "tensor_from_json",
]


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a C-contiguous float64 array (no copy if already one)."""
    return np.ascontiguousarray(x, dtype=np.float64)


class Rng:
    """Deterministic random stream: PCG64 seeded through a SeedSequence.

    ``child(*labels)`` derives an independent stream whose state is a pure
    function of ``(seed, labels)``: each label is hashed with CRC-32 and
    appended to the SeedSequence spawn key. This is how the harness splits a
    single config seed into per-purpose streams ("data", "teacher-init",
    "batches", ...) without any hidden global state.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.spawn_key = tuple(int(k) for k in _spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=self.spawn_key))
        )

    def child(self, *labels) -> "Rng":
        """Derive an independent, reproducible stream named by ``labels``."""
        key = self.spawn_key + tuple(zlib.crc32(str(lab).encode("utf-8")) for lab in labels)
        return Rng(self.seed, key)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=tuple(shape), dtype=np.float64)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape))

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Uniform integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=shape)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, spawn_key={self.spawn_key})"


def randn(rng: Rng, shape: Sequence[int]) -> np.ndarray:
    """I.i.d. standard-normal tensor of the given (non-empty) shape.

    Draws come from numpy's documented ziggurat sampler on the PCG64 stream,
    so a fixed seed reproduces the same tensor bit-for-bit everywhere.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("randn requires a non-empty shape")
    if any(d < 1 for d in shape):
        raise ValueError(f"randn dimensions must all be >= 1, got {shape}")
    return rng.normal(shape)


def moments(x) -> tuple[float, float]:
    """Population mean and variance (divisor n) over all elements."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("moments requires a non-empty tensor")
    m = float(x.mean())
    v = float(np.mean((x - m) ** 2))
    return m, v


def tensor_to_json(x) -> str:
    """Serialize a tensor as JSON with a shape header and row-major flat data.

    Values round-trip bit-exactly: json emits shortest-repr floats, which
    IEEE-754 doubles recover exactly on parse.
    """
    x = as_tensor(x)
    return json.dumps({"shape": list(x.shape), "data": x.ravel().tolist()})


def tensor_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    shape = tuple(int(d) for d in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    n = 1
    for d in shape:
        n *= d
    if data.size != n:
        raise ValueError(f"shape {shape} does not match data length {data.size}")
    return data.reshape(shape)
