"""
Frequency-biased reshuffling null model for cross-size rank correlations.

A null sample orders the whole universe by successive draws without
replacement, each asset drawn with probability proportional to its crash
frequency at the base size. Assets with zero frequency follow in uniformly
random order. The drawn order, read as a ranking, is correlated with the
observed ranking to give one null Spearman value.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cojump import CrashFrequencyTable
from .errors import ConfigurationError
from .ranks import RankVector, spearman
from .rng import NULL_STREAM, chunk_sizes, substream

DEFAULT_SAMPLES = 100_000
CHUNK = 8192
# Null values and an observed rho closer than this count as equal.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ShuffleWeights:
    size_m: int
    assets: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (len(self.assets),):
            raise ConfigurationError("one weight per asset required")
        if not np.all(np.isfinite(w) & (w >= 0)):
            raise ConfigurationError("shuffle weights must be finite and non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def degenerate(self) -> bool:
        """All weights zero: sampling falls back to a uniform shuffle."""
        return self.total == 0.0

    @classmethod
    def from_table(cls, table: CrashFrequencyTable, m: int) -> "ShuffleWeights":
        return cls(m, table.asset_universe, table.column(m).astype(np.float64))


def successive_draws(weights: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` orderings of ``range(len(weights))`` by successive weighted draws.

    Exponential race: an item with weight ``w`` finishes at ``E / w`` with
    ``E`` standard exponential, and sorting finishing times reproduces
    sequential sampling without replacement.
    """
    pos = np.flatnonzero(weights > 0)
    zero = np.flatnonzero(weights == 0)
    out = np.empty((n, weights.size), dtype=np.int64)
    if pos.size:
        finish = rng.standard_exponential((n, pos.size)) / weights[pos]
        out[:, :pos.size] = pos[np.argsort(finish, axis=1)]
    if zero.size:
        out[:, pos.size:] = zero[np.argsort(rng.random((n, zero.size)), axis=1)]
    return out


def _weights_array(weights, n_assets: int) -> np.ndarray:
    w = weights.weights if isinstance(weights, ShuffleWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != (n_assets,):
        raise ConfigurationError(f"expected {n_assets} weights, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigurationError("shuffle weights must be finite and non-negative")
    return w


def weighted_shuffle(universe, weights, rng: np.random.Generator) -> list:
    """Permutation of ``universe`` drawn by successive weighted sampling.

    All-zero weights degrade to a uniform shuffle with a warning.
    """
    universe = list(universe)
    w = _weights_array(weights, len(universe))
    if w.sum() == 0:
        warnings.warn("all shuffle weights are zero; using a uniform shuffle", stacklevel=2)
    order = successive_draws(w, rng, 1)[0]
    return [universe[i] for i in order]


@dataclass(frozen=True, eq=False)
class NullDistribution:
    """Sorted null Spearman values for one base size.

    ``samples`` holds the defined values; ``n_gaps`` counts draws whose
    correlation was undefined, so ``samples.size + n_gaps == n_samples``.
    """

    size_m: int
    samples: np.ndarray
    seed: int
    n_samples: int
    n_gaps: int = 0
    degenerate: bool = False

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.size + self.n_gaps != self.n_samples:
            raise ConfigurationError("samples and gaps must add up to n_samples")
        if s.size > 1 and np.any(np.diff(s) < 0):
            raise ConfigurationError("null samples must be sorted")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def quantile(self, rho: float) -> float:
        """Mid-rank empirical quantile of ``rho``: P(null < rho) + P(null == rho) / 2."""
        if self.samples.size == 0 or math.isnan(rho):
            return math.nan
        below = np.searchsorted(self.samples, rho - TIE_TOLERANCE, side="left")
        upto = np.searchsorted(self.samples, rho + TIE_TOLERANCE, side="right")
        return float(below + 0.5 * (upto - below)) / self.samples.size

    def value_at(self, q: float) -> float:
        return float(np.quantile(self.samples, q))


def _null_chunk(centered_ranks, weights, positions, denom, seed, m, index, size):
    rng = substream(seed, NULL_STREAM, m, index)
    perms = successive_draws(weights, rng, size)
    rho = centered_ranks[perms] @ positions / denom
    return np.clip(rho, -1.0, 1.0)


def build_null(S_m: RankVector, weights, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
               threads: int = 1) -> NullDistribution:
    """Null distribution of Spearman(G, S_m) over weighted reshuffles G.

    Draws are split into fixed-size chunks, each with its own substream of
    ``seed``, so the result does not depend on ``threads``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    n = len(S_m.assets)
    w = _weights_array(weights, n)
    degenerate = bool(w.sum() == 0)
    sc = S_m.ranks - S_m.ranks.mean()
    s_ss = float(sc @ sc)
    if n < 2 or s_ss == 0.0:
        return NullDistribution(S_m.size_m, np.empty(0), seed, n_samples, n_samples, degenerate)
    positions = np.arange(1, n + 1) - (n + 1) / 2.0
    denom = math.sqrt(float(positions @ positions) * s_ss)
    sizes = chunk_sizes(n_samples, CHUNK)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(
            lambda job: _null_chunk(sc, w, positions, denom, seed, S_m.size_m, *job),
            enumerate(sizes),
        ))
    samples = np.sort(np.concatenate(parts))
    return NullDistribution(S_m.size_m, samples, seed, n_samples, 0, degenerate)


def significance(S_m: RankVector, S_target: RankVector, null: NullDistribution) -> float:
    """Quantile of Spearman(S_target, S_m) within the null built for S_m."""
    if null.size_m != S_m.size_m:
        raise ConfigurationError(f"null built for size {null.size_m}, not {S_m.size_m}")
    return null.quantile(spearman(S_target, S_m))
