"""I.i.d. noise streams, the left shift, and the product metric.

A stream is a pure value: coordinate k of the sequence is a hash of
(seed, k), so shifting and cloning are O(1) and any window can be
regenerated bit-for-bit. Coordinates are zero-based; the first noise a
driven orbit consumes is coordinate 0.

Laws on [-eps, eps]: uniform, a centered Gaussian with sigma = eps/2
truncated at two sigma, or the unit mass at 0. eps = 0 degenerates every
family to the atomic case.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# Phi(-2), Phi(2) for the two-sigma truncation window
_PHI_LO = float(ndtr(-2.0))
_PHI_HI = float(ndtr(2.0))


class NoiseFamily(Enum):
    UNIFORM_SYMMETRIC = "uniform_symmetric"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"
    ATOMIC_ZERO = "atomic_zero"


@dataclass(frozen=True)
class NoiseSpec:
    """Law of one coordinate: family, amplitude, seed of the whole sequence."""

    family: NoiseFamily = NoiseFamily.UNIFORM_SYMMETRIC
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise DomainError("epsilon must lie in [0, 1]")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def effective_family(self) -> NoiseFamily:
        return NoiseFamily.ATOMIC_ZERO if self.epsilon == 0.0 else self.family


def _mix(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def _uniform01(spec: NoiseSpec, start: int, count: int) -> np.ndarray:
    idx = np.arange(start, start + count, dtype=np.uint64)
    bits = _mix(_mix(idx) ^ np.uint64(int(spec.seed)))
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def draw_block(spec: NoiseSpec, start: int, count: int) -> np.ndarray:
    """Coordinates start .. start+count-1 of the sequence, vectorized."""
    if start < 0 or count < 0:
        raise DomainError("start and count must be nonnegative")
    fam = spec.effective_family
    if fam is NoiseFamily.ATOMIC_ZERO:
        return np.zeros(count)
    u = _uniform01(spec, start, count)
    if fam is NoiseFamily.UNIFORM_SYMMETRIC:
        return spec.epsilon * (2.0 * u - 1.0)
    # inverse-CDF transform of the truncated normal
    return 0.5 * spec.epsilon * ndtri(_PHI_LO + u * (_PHI_HI - _PHI_LO))


@dataclass(frozen=True)
class NoiseStream:
    """A noise sequence with a read position. Immutable; `shift` returns
    the advanced stream, so clones are plain copies of the value."""

    spec: NoiseSpec
    cursor: int = 0

    def __post_init__(self):
        if self.cursor < 0:
            raise DomainError("cursor must be nonnegative")

    def head(self) -> float:
        return float(draw_block(self.spec, self.cursor, 1)[0])

    def shift(self, n: int = 1) -> "NoiseStream":
        if n < 0:
            raise DomainError("cannot shift backwards")
        return replace(self, cursor=self.cursor + n)

    def clone(self) -> "NoiseStream":
        return replace(self)

    def take(self, count: int) -> np.ndarray:
        """The next `count` coordinates, without advancing."""
        return draw_block(self.spec, self.cursor, count)


def sample_head(stream: NoiseStream) -> float:
    return stream.head()


def shift(stream: NoiseStream) -> NoiseStream:
    return stream.shift()


def omega_metric(a: Union[NoiseStream, np.ndarray],
                 b: Union[NoiseStream, np.ndarray],
                 n_terms: int) -> float:
    """Partial sum of the product metric sum 2^-n d(eta_n)/(1+d(eta_n)).

    The tail beyond n_terms contributes at most 2^-n_terms since every
    term is below 2^-n.
    """
    if n_terms < 1:
        raise DomainError("n_terms must be at least 1")
    xs = a.take(n_terms) if isinstance(a, NoiseStream) else np.asarray(a, dtype=float)[:n_terms]
    ys = b.take(n_terms) if isinstance(b, NoiseStream) else np.asarray(b, dtype=float)[:n_terms]
    if len(xs) < n_terms or len(ys) < n_terms:
        raise DomainError("sequences shorter than n_terms")
    d = np.abs(xs - ys)
    terms = d / (1.0 + d)
    weights = np.exp2(-np.arange(1, n_terms + 1, dtype=float))
    return float(weights @ terms)


def law_cdf(spec: NoiseSpec, x: np.ndarray) -> np.ndarray:
    """Closed-form CDF of the one-coordinate law (distribution tests)."""
    x = np.asarray(x, dtype=float)
    eps = spec.epsilon
    fam = spec.effective_family
    if fam is NoiseFamily.ATOMIC_ZERO:
        return (x >= 0.0).astype(float)
    if fam is NoiseFamily.UNIFORM_SYMMETRIC:
        return np.clip((x + eps) / (2.0 * eps), 0.0, 1.0)
    z = np.clip(2.0 * x / eps, -2.0, 2.0)
    return (ndtr(z) - _PHI_LO) / (_PHI_HI - _PHI_LO)
