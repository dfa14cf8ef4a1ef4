"""Reproducible chunked Monte-Carlo.

Samples are drawn in fixed-size chunks; chunk ``i`` gets its own Philox stream
derived from ``(seed, i)``.  Chunk results are merged in index order, so the
estimate depends only on ``(seed, n_samples)`` and not on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

CHUNK = 4096


@dataclass(frozen=True)
class McEstimate:
    mean: complex
    std_error: float
    n_samples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "mean": [self.mean.real, self.mean.imag],
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }

    def __add__(self, other: "McEstimate") -> "McEstimate":
        # independent estimates
        return McEstimate(
            self.mean + other.mean,
            math.hypot(self.std_error, other.std_error),
            self.n_samples + other.n_samples,
            self.seed,
        )

    def scale(self, c: complex) -> "McEstimate":
        return McEstimate(c * self.mean, abs(c) * self.std_error, self.n_samples, self.seed)

    def agrees_with(self, other: "McEstimate", nsigma: float = 3.0) -> bool:
        err = math.hypot(self.std_error, other.std_error)
        return abs(self.mean - other.mean) <= nsigma * err


def exact(value: complex, seed: int = 0) -> McEstimate:
    return McEstimate(complex(value), 0.0, 0, seed)


def chunk_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def _chunk_sizes(n_samples: int, chunk: int) -> list[int]:
    full, rest = divmod(n_samples, chunk)
    return [chunk] * full + ([rest] if rest else [])


def run(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    n_samples: int,
    seed: int,
    workers: int = 1,
    chunk: int = CHUNK,
) -> McEstimate:
    """Average ``sampler(rng, k)`` (a length-k array) over ``n_samples`` draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    sizes = _chunk_sizes(n_samples, chunk)

    def work(i):
        x = np.asarray(sampler(chunk_rng(seed, i), sizes[i]), dtype=complex)
        return x.sum(), (np.abs(x) ** 2).sum()

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(i) for i in range(len(sizes))]
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s / n_samples
    if n_samples > 1:
        var = max(s2 / n_samples - abs(mean) ** 2, 0.0) * n_samples / (n_samples - 1)
    else:
        var = 0.0
    return McEstimate(complex(mean), math.sqrt(var / n_samples), n_samples, seed)


def product(factors: list[McEstimate]) -> McEstimate:
    """Product of independent estimates, first-order error propagation."""
    mean = complex(1.0)
    for f in factors:
        mean *= f.mean
    var = 0.0
    for i, f in enumerate(factors):
        rest = 1.0
        for k, h in enumerate(factors):
            if k != i:
                rest *= abs(h.mean)
        var += (rest * f.std_error) ** 2
    n = min((f.n_samples for f in factors if f.n_samples), default=0)
    seed = factors[0].seed if factors else 0
    return McEstimate(mean, math.sqrt(var), n, seed)
