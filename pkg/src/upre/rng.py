"""Deterministic pseudo-random generator used everywhere in the package.

The generator is SplitMix64 (Steele, Lea & Flood 2014), chosen because it
is trivial to restate in any language and has a single 64-bit state:

    value(i) = mix64(seed + i * 0x9E3779B97F4A7C15)        (i = 1, 2, ...)

    mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27; z *= 0x94D049BB133111EB
              z ^= z >> 31                                   (mod 2**64)

Uniform doubles take the top 53 bits (``(value >> 11) * 2**-53``) and
normals come from Box-Muller pairs over those uniforms, so two runs with
the same seed produce bit-identical streams.  Independent streams are
derived from a parent seed plus a sequence of string/int keys, each key
folded into the state through ``mix64``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(_GOLDEN)
_U_MIX_A = np.uint64(_MIX_A)
_U_MIX_B = np.uint64(_MIX_B)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_NEG53 = 2.0 ** -53


def _mix_int(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * _MIX_A) & _MASK
    z ^= z >> 27
    z = (z * _MIX_B) & _MASK
    z ^= z >> 31
    return z


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> _S30)
    z = z * _U_MIX_A
    z = z ^ (z >> _S27)
    z = z * _U_MIX_B
    z = z ^ (z >> _S31)
    return z


def _key_chunks(key) -> list[int]:
    if isinstance(key, bool):
        return [int(key)]
    if isinstance(key, (int, np.integer)):
        return [int(key) & _MASK]
    if isinstance(key, str):
        raw = key.encode("utf-8")
        chunks = [len(raw) & _MASK]
        for off in range(0, len(raw), 8):
            chunks.append(int.from_bytes(raw[off : off + 8], "little"))
        return chunks
    raise TypeError(f"rng keys must be int or str, got {type(key).__name__}")


def derive_seed(seed: int, *keys) -> int:
    """Fold ``keys`` into ``seed`` to name an independent stream."""
    h = _mix_int((seed & _MASK) ^ _GOLDEN)
    for key in keys:
        for chunk in _key_chunks(key):
            h = _mix_int((h + _GOLDEN) ^ chunk)
    return h


class Rng:
    """Counter-based SplitMix64 stream; every draw advances the counter."""

    __slots__ = ("seed", "_counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._counter = 0

    def split(self, *keys) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix_array(np.uint64(self.seed) + idx * _U_GOLDEN)

    def uniform(self, n: int = 1) -> np.ndarray:
        """n doubles in [0, 1)."""
        return ((self._raw(n) >> _S11).astype(np.float64)) * _TWO_NEG53

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller; scalar when shape is ()."""
        if isinstance(shape, int):
            shape = (shape,)
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        # u1 in (0, 1] so the log is finite.
        u1 = ((self._raw(pairs) >> _S11).astype(np.float64) + 1.0) * _TWO_NEG53
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:count]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """n ints uniform over [low, high); high must exceed low."""
        if high <= low:
            raise ValueError("integers() needs high > low")
        span = high - low
        return (low + np.floor(self.uniform(n) * span).astype(np.int64)).clip(low, high - 1)

    def bernoulli(self, p: float) -> bool:
        """One draw, consuming exactly one stream value."""
        return bool(self.uniform(1)[0] < p)

    def choice(self, n_options: int) -> int:
        return int(self.integers(0, n_options, 1)[0])
