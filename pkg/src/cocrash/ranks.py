"""Frequency ranks per crash size and the cross-size Spearman structure."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cojump import CrashFrequencyTable
from .errors import ConfigurationError, RangeError, UndefinedCorrelation

DEFAULT_WINDOW = (2, 20)


def average_ranks(values) -> np.ndarray:
    """Ascending ranks starting at 1; tied values share the mean of their ranks."""
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # first index of each run of equal values, plus the end sentinel
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


@dataclass(frozen=True, eq=False)
class RankVector:
    """Ranks of every asset by decreasing crash frequency at one size."""

    size_m: int
    assets: tuple
    ranks: np.ndarray
    participating: int

    def __post_init__(self):
        r = np.array(self.ranks, dtype=np.float64)
        n = r.size
        if n != len(self.assets):
            raise ConfigurationError("one rank per asset required")
        if abs(r.sum() - n * (n + 1) / 2.0) > 1e-9:
            raise ConfigurationError("ranks must sum to N(N+1)/2")
        r.setflags(write=False)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "ranks", r)

    def as_dict(self) -> dict:
        return dict(zip(self.assets, self.ranks.tolist()))


def rank_assets(table: CrashFrequencyTable, m: int) -> RankVector:
    """Rank 1 is the most frequent crasher at size ``m``; zero counts form one tie."""
    if not 1 <= m <= table.max_size:
        raise RangeError(f"crash size {m} outside 1..{table.max_size}")
    f = table.column(m)
    return RankVector(m, table.asset_universe, average_ranks(-f), int((f > 0).sum()))


def _values(x) -> np.ndarray:
    if isinstance(x, RankVector):
        return x.ranks
    return np.asarray(x, dtype=np.float64)


def spearman(a, b) -> float:
    """Spearman's rho as the Pearson correlation of average ranks (exact under ties).

    Raises
    ------
    UndefinedCorrelation
        If either side is constant.
    """
    x, y = _values(a), _values(b)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError(f"spearman needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ConfigurationError("spearman needs at least 2 observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("rank correlation undefined for a constant vector")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, rho))


@dataclass(frozen=True, eq=False)
class CorrelationCurve:
    """``rhos[k]`` is the correlation between sizes ``base_size`` and ``base_size + taus[k]``.

    NaN entries are gaps: the target size had no events or the correlation
    was undefined.
    """

    base_size: int
    taus: np.ndarray
    rhos: np.ndarray

    def rho(self, tau: int) -> float:
        if not 1 <= tau <= self.taus.size:
            return math.nan
        return float(self.rhos[tau - 1])

    @property
    def gaps(self) -> list[int]:
        return self.taus[np.isnan(self.rhos)].tolist()


def correlation_curves(table: CrashFrequencyTable) -> list[CorrelationCurve]:
    """Spearman correlation from every populated base size to every larger size.

    Base sizes without events are skipped; see :attr:`CorrelationCurve.gaps`
    for targets that could not be compared.
    """
    if table.max_size < 2:
        raise ConfigurationError("correlation curves need a maximum crash size of at least 2")
    populated = set(table.sizes_with_events())
    ranks = {m: rank_assets(table, m) for m in populated}
    curves = []
    for m in sorted(populated):
        taus = np.arange(1, table.max_size - m + 1)
        rhos = np.full(taus.size, np.nan)
        for k, tau in enumerate(taus):
            target = ranks.get(m + int(tau))
            if target is None:
                continue
            try:
                rhos[k] = spearman(ranks[m], target)
            except UndefinedCorrelation:
                pass
        curves.append(CorrelationCurve(int(m), taus, rhos))
    return curves


@dataclass(frozen=True)
class SteadyState:
    base_size: int
    mean_rho: float
    n_points: int
    truncated: bool


def steady_state(curves: Sequence[CorrelationCurve], m: int,
                 window: tuple = DEFAULT_WINDOW) -> SteadyState:
    """Mean correlation over offsets ``window[0]..window[1]``, skipping gaps.

    ``truncated`` is set when the largest observed size cuts the window short.
    A base size with no usable offset gives ``mean_rho = nan``.
    """
    lo, hi = window
    if not 1 <= lo <= hi:
        raise ConfigurationError(f"bad steady-state window {window}")
    curve = next((c for c in curves if c.base_size == m), None)
    if curve is None:
        return SteadyState(m, math.nan, 0, False)
    top = min(hi, curve.taus.size)
    vals = curve.rhos[lo - 1:top] if top >= lo else np.empty(0)
    vals = vals[~np.isnan(vals)]
    mean = float(vals.mean()) if vals.size else math.nan
    return SteadyState(m, mean, int(vals.size), curve.taus.size < hi)


def steady_states(curves: Sequence[CorrelationCurve], window: tuple = DEFAULT_WINDOW) -> list[SteadyState]:
    return [steady_state(curves, c.base_size, window) for c in curves]
