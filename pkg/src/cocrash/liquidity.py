"""Relations between average daily dollar volume and crash involvement."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .cojump import CoCrashEvent, CrashFrequencyTable
from .errors import ConfigurationError, LookupFailure
from .marketdata import PricePanel, average_daily_dollar_volume
from .ranks import average_ranks, spearman
from .rng import PERMUTATION_STREAM, substream

DEFAULT_TOP_K = 20
DEFAULT_PERMUTATIONS = 10_000


@dataclass(frozen=True, eq=False)
class LiquidityProfile:
    """Average daily dollar volume per asset and the ``k`` most traded assets.

    Ties in volume at the top-k boundary go to the asset listed first.
    """

    assets: tuple
    dtv_values: np.ndarray
    k: int = DEFAULT_TOP_K

    def __post_init__(self):
        v = np.array(self.dtv_values, dtype=np.float64)
        if v.shape != (len(self.assets),):
            raise ConfigurationError("one volume per asset required")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigurationError("dollar volumes must be finite and non-negative")
        if self.k < 1:
            raise ConfigurationError("top-k size must be >= 1")
        v.setflags(write=False)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "dtv_values", v)
        order = np.argsort(-v, kind="stable")[: min(self.k, v.size)]
        object.__setattr__(self, "top_k_set", frozenset(self.assets[i] for i in order))

    @property
    def dtv(self) -> dict:
        return dict(zip(self.assets, self.dtv_values.tolist()))

    @classmethod
    def from_panel(cls, panel: PricePanel, k: int = DEFAULT_TOP_K) -> "LiquidityProfile":
        values = [average_daily_dollar_volume(panel, a) for a in panel.assets]
        return cls(panel.assets, values, k)

    def aligned(self, universe: Sequence[str]) -> np.ndarray:
        """Volumes in the order of ``universe``."""
        index = {a: i for i, a in enumerate(self.assets)}
        try:
            return self.dtv_values[[index[a] for a in universe]]
        except KeyError as exc:
            raise LookupFailure(f"no volume for asset {exc.args[0]!r}") from None


def crash_weighted_dtv(table: CrashFrequencyTable, profile: LiquidityProfile, m: int) -> float:
    """Frequency-weighted mean volume of the assets crashing at size ``m``; NaN if none."""
    f = table.column(m).astype(np.float64)
    total = f.sum()
    if total == 0:
        return math.nan
    return float(f @ profile.aligned(table.asset_universe) / total)


class VolumeCorrelation(NamedTuple):
    rho: float
    significant: bool
    p_value: float


def volume_frequency_correlation(table: CrashFrequencyTable, profile: LiquidityProfile, m: int,
                                 alpha: float = 0.05, n_permutations: int = DEFAULT_PERMUTATIONS,
                                 seed: int = 0) -> VolumeCorrelation:
    """Spearman between volume and crash count at size ``m``, with a permutation test.

    The p-value is two-sided, ``(1 + #{|rho_perm| >= |rho|}) / (1 + n_permutations)``,
    from uniform shuffles of the frequency vector. A constant frequency or
    volume vector yields ``rho = nan`` and ``significant = False``.
    """
    if table.n_assets < 3:
        raise ConfigurationError("volume-frequency correlation needs at least 3 assets")
    f = table.column(m).astype(np.float64)
    dtv = profile.aligned(table.asset_universe)
    if np.all(f == f[0]) or np.all(dtv == dtv[0]):
        return VolumeCorrelation(math.nan, False, math.nan)
    rho = spearman(dtv, f)

    rx = average_ranks(dtv)
    ry = average_ranks(f)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    rng = substream(seed, PERMUTATION_STREAM, m)
    perms = np.argsort(rng.random((n_permutations, f.size)), axis=1)
    null = ry[perms] @ rx / denom
    extreme = int(np.count_nonzero(np.abs(null) >= abs(rho) - 1e-12))
    p = (1 + extreme) / (1 + n_permutations)
    return VolumeCorrelation(rho, p <= alpha, p)


def liquid_crash_fraction(cocrashes: Sequence[CoCrashEvent], profile: LiquidityProfile, m: int) -> float:
    """Share of size-``m`` co-crashes with at least one top-k member; NaN if none."""
    events = [e for e in cocrashes if e.size_m == m]
    if not events:
        return math.nan
    top = profile.top_k_set
    return sum(1 for e in events if e.members & top) / len(events)
