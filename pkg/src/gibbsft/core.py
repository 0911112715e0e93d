"""Shared value types, the two involutions (time reversal, spin flip) and RNG streams.

Everything here is immutable; operations return new objects.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

ISING = (1, -1)

RNG_FAMILY = "numpy.random.Philox"


class UnsupportedAlphabetError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class CapacityError(ValueError):
    pass


class StatisticalInsufficiency(ValueError):
    pass


class IntegrityError(RuntimeError):
    """A persisted artifact is missing, truncated or inconsistent."""


def _frozen_array(values, dtype=np.int8) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpinConfig:
    """One time layer: a spin per site of a ring of length ``L``."""

    values: np.ndarray
    alphabet: tuple = ISING

    def __post_init__(self):
        vals = _frozen_array(self.values)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("SpinConfig needs a 1-d array with at least one site")
        if not np.isin(vals, self.alphabet).all():
            raise ValueError(f"spins outside alphabet {self.alphabet}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "alphabet", tuple(self.alphabet))

    @property
    def L(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        return (
            isinstance(other, SpinConfig)
            and self.alphabet == other.alphabet
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.alphabet, self.values.tobytes()))


@dataclass(frozen=True)
class SpaceTimeWindow:
    """Box of sites ``|i| <= L`` and times ``|n| <= N`` around a centre.

    ``spans_ring`` marks a window that covers a whole periodic ring, in which
    case there is no spatial boundary and ``L`` only records the ring size.
    """

    L: int
    N: int
    spans_ring: bool = False

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("window half-width L must be >= 0")
        if self.N < 1:
            raise ValueError("window temporal half-width N must be >= 1")

    @property
    def width(self) -> int:
        return 2 * self.N + 1

    @property
    def cardinality(self) -> int:
        return (2 * self.L + 1) * (2 * self.N + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered frames, stored as a read-only ``(T, L)`` int8 array."""

    frames: np.ndarray
    alphabet: tuple = ISING

    def __post_init__(self):
        arr = self.frames
        if isinstance(arr, (list, tuple)) and arr and isinstance(arr[0], SpinConfig):
            arr = np.stack([c.values for c in arr])
        arr = _frozen_array(arr)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("Trajectory needs T >= 1 frames on a ring with L >= 1")
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "alphabet", tuple(self.alphabet))

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])

    @property
    def L(self) -> int:
        return int(self.frames.shape[1])

    def frame(self, k: int) -> SpinConfig:
        return SpinConfig(self.frames[k], self.alphabet)

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and self.alphabet == other.alphabet
            and np.array_equal(self.frames, other.frames)
        )

    def __hash__(self):
        return hash((self.alphabet, self.frames.shape, self.frames.tobytes()))


@dataclass(frozen=True)
class RngStream:
    """Reproducible replica stream: ``(seed, stream_index)`` fixes every draw.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    distinct indices give independent Philox (counter-based) generators.
    """

    seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream_index < 0:
            raise ValueError("stream_index must be >= 0")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(ss))

    def spawn(self, n: int) -> list["RngStream"]:
        """Child streams for replicas; index space is offset to avoid collisions."""
        base = (self.stream_index + 1) * 1_000_003
        return [RngStream(self.seed, base + k) for k in range(n)]


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def time_reverse(t: Trajectory) -> Trajectory:
    return Trajectory(t.frames[::-1], t.alphabet)


def spin_flip(c: SpinConfig, region: Iterable[int]) -> SpinConfig:
    """Negate the spins on ``region``; every other site is left alone."""
    if set(c.alphabet) != set(ISING):
        raise UnsupportedAlphabetError(f"spin flip needs the Ising alphabet, got {c.alphabet}")
    sites = sorted(set(int(i) for i in region))
    if sites and (sites[0] < 0 or sites[-1] >= c.L):
        raise ValueError(f"region {sites} not inside a ring of length {c.L}")
    vals = c.values.copy()
    vals[sites] = -vals[sites]
    return SpinConfig(vals, c.alphabet)


def ring_sites(center: int, half_width: int, ring: int) -> np.ndarray:
    """Sites ``center + j`` for ``|j| <= half_width`` on a ring, in window order."""
    return (center + np.arange(-half_width, half_width + 1)) % ring
