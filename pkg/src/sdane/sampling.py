"""Uniform client sampling without replacement, plus exact enumeration oracles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SampleDraw",
    "sample_subset",
    "substream",
    "subset_mean_variance_oracle",
    "subset_mean_expectation",
    "sampling_variance",
    "SAMPLING_STREAM",
    "SOLVER_STREAM",
]

ENUM_CAP = 10_000

# stream tags for substream(); client solver streams use SOLVER_STREAM + client id
SAMPLING_STREAM = 0
SOLVER_STREAM = 1


@dataclass(frozen=True)
class SampleDraw:
    ids: tuple[int, ...]
    seed_stream_position: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ids, self.ids[1:])):
            raise ValueError("sample ids must be strictly increasing")

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def substream(seed: int, position: int, stream: int = SAMPLING_STREAM) -> np.random.Generator:
    """Generator keyed by (seed, position, stream).

    Derivation is counter based (``SeedSequence`` spawn keys), so the stream
    for a given round and client does not depend on what else was drawn.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(position), int(stream)))
    return np.random.default_rng(ss)


def sample_subset(n: int, s: int, rng: np.random.Generator, position: int = 0) -> SampleDraw:
    """Draw s of n client ids uniformly without replacement (partial Fisher-Yates)."""
    if not 1 <= s <= n:
        raise ValueError(f"sample size s={s} must lie in [1, n={n}]")
    if s == n:
        return SampleDraw(tuple(range(n)), position)
    perm = list(range(n))
    for i in range(s):
        j = int(rng.integers(i, n))
        perm[i], perm[j] = perm[j], perm[i]
    return SampleDraw(tuple(sorted(perm[:s])), position)


def _check_enumerable(n: int, s: int) -> None:
    if n < 2:
        raise ValueError("need at least two vectors")
    if not 1 <= s <= n:
        raise ValueError(f"s={s} must lie in [1, {n}]")
    if math.comb(n, s) > ENUM_CAP:
        raise ValueError(f"C({n}, {s}) = {math.comb(n, s)} subsets exceeds the enumeration cap {ENUM_CAP}")


def subset_mean_variance_oracle(values: Sequence, s: int) -> float:
    """E ||mean_S - mean||^2 over all size-s subsets, by exhaustive enumeration."""
    X = np.atleast_2d(np.asarray(values, dtype=float).reshape(len(values), -1))
    n = X.shape[0]
    _check_enumerable(n, s)
    center = X.mean(axis=0)
    total = math.fsum(
        float(np.sum((X[list(S)].mean(axis=0) - center) ** 2))
        for S in itertools.combinations(range(n), s)
    )
    return total / math.comb(n, s)


def subset_mean_expectation(values: Sequence, s: int) -> np.ndarray:
    """E[mean_S] over all size-s subsets, by exhaustive enumeration."""
    X = np.atleast_2d(np.asarray(values, dtype=float).reshape(len(values), -1))
    n = X.shape[0]
    _check_enumerable(n, s)
    acc = np.zeros(X.shape[1])
    for S in itertools.combinations(range(n), s):
        acc += X[list(S)].mean(axis=0)
    return acc / math.comb(n, s)


def sampling_variance(values: Sequence, s: int) -> float:
    """Closed form (n - s) / (n - 1) * zeta^2 / s, zeta^2 the population variance."""
    X = np.atleast_2d(np.asarray(values, dtype=float).reshape(len(values), -1))
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two vectors")
    zeta_sq = float(np.mean(np.sum((X - X.mean(axis=0)) ** 2, axis=1)))
    return (n - s) / (n - 1) * zeta_sq / s
