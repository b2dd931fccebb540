"""Two-sample Kolmogorov-Smirnov statistic and a seeded permutation test."""

from __future__ import annotations

import numpy as np

from .errors import EmptySample
from .prng import derive_seed

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64_block(seed: int, n: int) -> np.ndarray:
    """The first ``n`` splitmix64 outputs for ``seed``, vectorised."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def ks_two_sample(a, b) -> float:
    """Exact sup-distance between the two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def permutation_p(a, b, iterations: int = 1000, seed: int = 0) -> float:
    """Permutation p-value of the KS statistic under exchangeability.

    Permutation ``k`` orders the pooled sample by splitmix64 keys drawn from
    ``derive_seed(seed, "perm", k)``; the p-value is ``(hits + 1) / (iterations + 1)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    observed = ks_two_sample(a, b)
    pooled = np.concatenate([a, b])
    hits = 0
    for k in range(iterations):
        keys = splitmix64_block(derive_seed(seed, "perm", k), pooled.size)
        perm = pooled[np.argsort(keys, kind="stable")]
        if ks_two_sample(perm[: a.size], perm[a.size:]) >= observed - 1e-12:
            hits += 1
    return (hits + 1) / (iterations + 1)
