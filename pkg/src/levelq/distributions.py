"""Unit-mean renewal inputs: distribution families, epoch sampling, counting.

Every family is normalized at construction so the inter-event mean is exactly
1; the variance stored on the spec is the analytic variance of the normalized
law.  Deterministic (zero-variance) inputs are rejected, the diffusion
coefficients downstream would degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FAMILIES",
    "RenewalSpec",
    "EpochSequence",
    "make_renewal_spec",
    "sample_epochs",
    "renewal_count",
    "make_stream",
]

FAMILIES = ("exponential", "gamma", "lognormal", "uniform-shifted", "hyperexponential")


def make_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for a (replication, source) key."""
    seq = np.random.SeedSequence([int(master_seed), *map(int, key)])
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class RenewalSpec:
    """A positive, unit-mean inter-event law with finite variance.

    ``params`` is family specific and already normalized:
      exponential        ()                 rate 1
      gamma              (k,)               shape k, scale 1/k
      lognormal          (s,)               sigma_log s, mu_log -s^2/2
      uniform-shifted    (w,)               uniform on [1-w, 1+w], 0 < w < 1
      hyperexponential   (p, r1, r2)        mixture rates after normalization
    """

    family: str
    params: tuple[float, ...]
    variance: float

    def sample(self, stream: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "exponential":
            return stream.exponential(1.0, size)
        if self.family == "gamma":
            (k,) = self.params
            return stream.gamma(k, 1.0 / k, size)
        if self.family == "lognormal":
            (s,) = self.params
            return stream.lognormal(-0.5 * s * s, s, size)
        if self.family == "uniform-shifted":
            (w,) = self.params
            return stream.uniform(1.0 - w, 1.0 + w, size)
        p, r1, r2 = self.params
        pick = stream.random(size) < p
        scale = np.where(pick, 1.0 / r1, 1.0 / r2)
        return stream.exponential(1.0, size) * scale


def make_renewal_spec(family: str, raw_params=()) -> RenewalSpec:
    """Normalize raw family parameters to a unit-mean spec.

    Raises ValueError for parameters outside the family's domain or for
    parameter choices that would make the law deterministic or allow
    nonpositive inter-event times.
    """
    raw = tuple(float(p) for p in np.atleast_1d(raw_params))
    if family == "exponential":
        if raw and raw[0] <= 0:
            raise ValueError("exponential rate must be positive")
        return RenewalSpec("exponential", (), 1.0)
    if family == "gamma":
        if len(raw) != 1 or raw[0] <= 0:
            raise ValueError("gamma needs one positive shape parameter")
        k = raw[0]
        return RenewalSpec("gamma", (k,), 1.0 / k)
    if family == "lognormal":
        if len(raw) != 1 or raw[0] <= 0:
            raise ValueError("lognormal needs one positive log-scale parameter")
        s = raw[0]
        return RenewalSpec("lognormal", (s,), math.expm1(s * s))
    if family == "uniform-shifted":
        if len(raw) != 1:
            raise ValueError("uniform-shifted needs one half-width parameter")
        w = raw[0]
        if w <= 0:
            raise ValueError("uniform-shifted half-width must be positive (deterministic law rejected)")
        if w >= 1:
            raise ValueError("uniform-shifted half-width must be below 1 to keep support positive")
        return RenewalSpec("uniform-shifted", (w,), w * w / 3.0)
    if family == "hyperexponential":
        if len(raw) != 3:
            raise ValueError("hyperexponential needs (p, rate1, rate2)")
        p, r1, r2 = raw
        if not 0.0 <= p <= 1.0:
            raise ValueError("hyperexponential mixing probability must be in [0, 1]")
        if r1 <= 0 or r2 <= 0:
            raise ValueError("hyperexponential rates must be positive")
        mean = p / r1 + (1.0 - p) / r2
        r1n, r2n = r1 * mean, r2 * mean
        variance = 2.0 * (p / r1n**2 + (1.0 - p) / r2n**2) - 1.0
        if variance <= 0:
            raise ValueError("hyperexponential parameters give zero variance")
        return RenewalSpec("hyperexponential", (p, r1n, r2n), variance)
    raise ValueError(f"unknown family {family!r}, expected one of {FAMILIES}")


class EpochSequence:
    """Marks Z(0), Z(1), ... of one renewal stream and their partial sums.

    Marks are drawn lazily in blocks from the owning stream, so the simulator
    and the decomposition index the same sequence.  ``epochs[i]`` is the sum
    of marks 0..i, i.e. the time of the (i+1)-th counting event.
    """

    def __init__(self, spec: RenewalSpec, stream: np.random.Generator, block: int = 4096):
        self._spec = spec
        self._stream = stream
        self._block = max(int(block), 16)
        self.marks = np.empty(0)
        self.epochs = np.empty(0)
        self._grow(self._block)

    def _grow(self, count: int) -> None:
        fresh = self._spec.sample(self._stream, count)
        if np.any(fresh <= 0):
            raise ValueError("renewal marks must be strictly positive")
        base = self.epochs[-1] if self.epochs.size else 0.0
        self.marks = np.concatenate((self.marks, fresh))
        self.epochs = np.concatenate((self.epochs, base + np.cumsum(fresh)))

    def ensure_count(self, count: int) -> None:
        if count > self.marks.size:
            self._grow(max(count - self.marks.size, self._block))

    def ensure_cover(self, t: float) -> None:
        while self.epochs[-1] <= t:
            self._grow(self._block)

    def __len__(self) -> int:
        return self.marks.size


def sample_epochs(spec: RenewalSpec, horizon: float, stream: np.random.Generator, block: int = 4096) -> EpochSequence:
    """Epochs of one renewal stream covering [0, horizon]."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    seq = EpochSequence(spec, stream, block)
    seq.ensure_cover(horizon)
    return seq


def renewal_count(epochs, t: float) -> int:
    """Number of counting events in [0, t]: the first i with t < epochs[i].

    Right-continuous and nondecreasing in t; the count jumps exactly at the
    partial sums because the defining inequality is strict.
    """
    arr = epochs.epochs if isinstance(epochs, EpochSequence) else np.asarray(epochs)
    if t < 0:
        raise ValueError("renewal_count needs t >= 0")
    if arr.size == 0 or arr[-1] <= t:
        raise ValueError("epochs do not cover the requested time")
    return int(np.searchsorted(arr, t, side="right"))
