"""
Per-asset jump detection on one-minute returns.

Returns are first divided by a robust minute-of-week volatility profile, then
each return is standardised by a local bipower volatility estimated from the
preceding window, and flagged when its magnitude exceeds the Gumbel
critical value of the maximum of ``n`` such statistics.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError
from .marketdata import DEFAULT_SESSION, MINUTES_PER_DAY, PricePanel, ReturnSeries, SessionConfig

log = logging.getLogger(__name__)

BIPOWER_C = math.sqrt(2.0 / math.pi)
MAD_TO_SIGMA = 1.4826
# Weighted standard deviation: observations with (x / MAD-scale)^2 above the
# 99% chi-square(1) quantile get zero weight; 1.081 = 1 / E[z^2 | z^2 <= 6.635].
WSD_CUTOFF = 6.635
WSD_CONSISTENCY = 1.081
SCALE_ESTIMATORS = ("wsd", "mad")
MIN_PRODUCTS = 8
MIN_BUCKET_OBS = 5


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.05
    window_k: int = 270
    min_observations: int = 0
    # Half-width, in minutes, of the intraday neighbourhood pooled into each
    # periodicity estimate. 0 means single minutes.
    periodicity_pool: int = 12
    periodicity_scale: str = "wsd"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.window_k < 8:
            raise ConfigurationError(f"window_k must be >= 8, got {self.window_k}")
        if self.min_observations < 0 or self.periodicity_pool < 0:
            raise ConfigurationError("min_observations and periodicity_pool must be >= 0")
        if self.periodicity_scale not in SCALE_ESTIMATORS:
            raise ConfigurationError(f"periodicity_scale must be one of {SCALE_ESTIMATORS}")

    @property
    def required_length(self) -> int:
        return max(self.window_k + 1, self.min_observations)


@dataclass(frozen=True, eq=False)
class PeriodicityProfile:
    """Scale factor per minute-of-week bucket, normalised to unit mean square."""

    bucket_factors: np.ndarray
    bucket_count: int

    def __post_init__(self):
        f = np.array(self.bucket_factors, dtype=np.float64)
        if f.shape != (self.bucket_count,):
            raise ConfigurationError(
                f"profile has {f.size} factors for {self.bucket_count} buckets"
            )
        if not np.all(f > 0):
            raise ConfigurationError("periodicity factors must be positive")
        if abs(np.mean(f * f) - 1.0) > 1e-9:
            raise ConfigurationError("periodicity factors must have unit mean square")
        f.setflags(write=False)
        object.__setattr__(self, "bucket_factors", f)

    @classmethod
    def normalized(cls, factors) -> "PeriodicityProfile":
        f = np.asarray(factors, dtype=np.float64)
        return cls(f / math.sqrt(np.mean(f * f)), f.size)

    @classmethod
    def flat(cls, bucket_count: int) -> "PeriodicityProfile":
        return cls(np.ones(bucket_count), bucket_count)

    def __getitem__(self, bucket) -> float:
        return self.bucket_factors[bucket]


@dataclass(frozen=True)
class JumpEvent:
    asset_id: str
    timestamp: int
    statistic: float
    direction: int
    raw_return: float


def _mad_scale(x: np.ndarray) -> float:
    med = np.median(x)
    return MAD_TO_SIGMA * float(np.median(np.abs(x - med)))


def _wsd_scale(x: np.ndarray) -> float:
    s = _mad_scale(x)
    if s == 0:
        return 0.0
    keep = (x / s) ** 2 <= WSD_CUTOFF
    return math.sqrt(WSD_CONSISTENCY * float(np.sum(x[keep] ** 2)) / int(keep.sum()))


_SCALES = {"mad": _mad_scale, "wsd": _wsd_scale}


def _daily_scale(ts: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Per-return daily bipower volatility (returns of the same session day)."""
    day = ts // MINUTES_PER_DAY
    days, day_idx = np.unique(day, return_inverse=True)
    adjacent = np.diff(ts) == 1
    prods = np.abs(r[1:] * r[:-1])[adjacent]
    owner = day_idx[1:][adjacent]
    sums = np.bincount(owner, weights=prods, minlength=days.size)
    counts = np.bincount(owner, minlength=days.size)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.sqrt(sums / counts) / BIPOWER_C
    good = (counts >= MIN_PRODUCTS) & (scale > 0)
    if not good.any():
        raise ConfigurationError("no session day has enough adjacent returns for a daily scale")
    scale[~good] = np.median(scale[good])
    return scale[day_idx]


def estimate_periodicity(series: ReturnSeries, session: SessionConfig = DEFAULT_SESSION,
                         pool: int = 12, min_weeks: int = 4, scale: str = "wsd") -> PeriodicityProfile:
    """Robust minute-of-week volatility profile of one return series.

    Each return is first divided by its day's bipower volatility. The factor
    of a bucket is the product of a weekday level (robust scale of every
    return on that weekday) and an intraday level (robust scale over all
    weekdays of the minutes within ``pool`` of the bucket's minute, the
    window shifted inward near the open and close so it keeps its width).
    ``scale`` picks the robust estimator: ``"wsd"``, a MAD-seeded weighted
    standard deviation, or ``"mad"``. A window with fewer than 5
    observations gets a level of 1.0 and a warning.
    """
    if scale not in _SCALES:
        raise ConfigurationError(f"unknown periodicity scale {scale!r}")
    robust = _SCALES[scale]
    ts, r = series.timestamps, series.returns
    n_days = np.unique(ts // MINUTES_PER_DAY).size
    if n_days < 5 * min_weeks:
        raise ConfigurationError(
            f"{series.asset_id}: periodicity needs {min_weeks} full weeks of data, got {n_days} days"
        )
    z = r / _daily_scale(ts, r)
    per_day = session.minutes_per_day
    bucket = session.bucket(ts)
    weekday, minute = bucket // per_day, bucket % per_day
    thin = 0

    def level(values):
        nonlocal thin
        s = robust(values) if values.size >= MIN_BUCKET_OBS else 0.0
        if s > 0:
            return s
        thin += 1
        return 1.0

    day_level = np.array([level(z[weekday == d]) for d in range(5)])
    z = z / day_level[weekday]
    order = np.argsort(minute, kind="stable")
    zs = z[order]
    bounds = np.r_[0, np.cumsum(np.bincount(minute, minlength=per_day))]
    width = min(2 * pool + 1, per_day)
    intraday = np.empty(per_day)
    for t in range(per_day):
        lo = min(max(0, t - pool), per_day - width)
        intraday[t] = level(zs[bounds[lo]:bounds[lo + width]])
    if thin:
        warnings.warn(
            f"{series.asset_id}: {thin} periodicity windows had fewer than "
            f"{MIN_BUCKET_OBS} observations; level set to 1.0",
            stacklevel=2,
        )
    return PeriodicityProfile.normalized(np.outer(day_level, intraday).ravel())


def deseasonalize(series: ReturnSeries, profile: PeriodicityProfile,
                  session: SessionConfig = DEFAULT_SESSION) -> ReturnSeries:
    """Divide each return by its bucket's periodicity factor."""
    if profile.bucket_count != session.bucket_count:
        raise ConfigurationError(
            f"profile has {profile.bucket_count} buckets, session has {session.bucket_count}"
        )
    factors = profile.bucket_factors[session.bucket(series.timestamps)]
    return series.with_returns(series.returns / factors)


def _check_window(k: int) -> None:
    if k < 8:
        raise ConfigurationError(f"bipower window must be >= 8, got {k}")


def _min_products(k: int) -> int:
    return min(MIN_PRODUCTS, k - 2)


def bipower_scale(returns, i: int, K: int) -> float:
    """Local bipower volatility at index ``i`` from the ``K - 2`` products before it.

    Products with a missing (NaN) factor are skipped and the mean is taken
    over the products used. Returns NaN when too few products remain.
    """
    _check_window(K)
    r = np.asarray(returns, dtype=np.float64)
    if not K <= i < r.size:
        raise ConfigurationError(f"index {i} needs K <= i < {r.size} (K={K})")
    window = r[i - K + 1:i]
    prods = np.abs(window[1:] * window[:-1])
    prods = prods[~np.isnan(prods)]
    if prods.size < _min_products(K):
        return math.nan
    return math.sqrt(prods.sum() / prods.size / (BIPOWER_C * BIPOWER_C))


def rolling_bipower_scale(returns, K: int) -> np.ndarray:
    """Vectorised :func:`bipower_scale` for every index; NaN where unavailable."""
    _check_window(K)
    r = np.asarray(returns, dtype=np.float64)
    out = np.full(r.size, np.nan)
    if r.size <= K:
        return out
    prods = np.abs(r[1:] * r[:-1])  # prods[j - 1] pairs r[j] with r[j - 1]
    valid = ~np.isnan(prods)
    filled = np.where(valid, prods, 0.0)
    width = K - 2
    sums = sliding_window_view(filled, width).sum(axis=1)
    counts = sliding_window_view(valid, width).sum(axis=1)
    # window for index i covers prods[i - K + 1 : i - 1]
    start = np.arange(K, r.size) - K + 1
    s, c = sums[start], counts[start]
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.sqrt(s / c / (BIPOWER_C * BIPOWER_C))
    scale[c < _min_products(K)] = np.nan
    out[K:] = scale
    return out


def gumbel_critical_value(alpha: float) -> float:
    """Upper-``alpha`` quantile of the standard Gumbel law."""
    return -math.log(-math.log(1.0 - alpha))


def max_statistic_constants(n: int) -> tuple[float, float]:
    """Location and scale normalising the maximum of ``n`` absolute statistics."""
    root = math.sqrt(2.0 * math.log(n))
    c = BIPOWER_C
    location = root / c - (math.log(math.pi) + math.log(math.log(n))) / (2.0 * c * root)
    return location, 1.0 / (c * root)


def jump_threshold(n: int, alpha: float) -> float:
    """Critical value for ``|L(i)|`` with ``n`` tested returns."""
    location, scale = max_statistic_constants(n)
    return location + scale * gumbel_critical_value(alpha)


def _dense(series: ReturnSeries, session: SessionConfig | None):
    if session is None:
        idx = np.arange(series.returns.size)
    else:
        ordinal = session.ordinal(series.timestamps)
        idx = ordinal - ordinal[0]
    dense = np.full(int(idx[-1]) + 1, np.nan)
    dense[idx] = series.returns
    return dense, idx


def detect_jumps(series: ReturnSeries, config: DetectorConfig = DetectorConfig(),
                 session: SessionConfig | None = None,
                 raw: ReturnSeries | None = None) -> list[JumpEvent]:
    """Flag jumps in a (deseasonalized) return series.

    Parameters
    ----------
    series : ReturnSeries
        Returns to test, usually the output of :func:`deseasonalize`.
    config : DetectorConfig
    session : SessionConfig, optional
        When given, returns are laid out on the session-minute axis so that
        untraded minutes become gaps inside the bipower window. Without it the
        series is treated as contiguous.
    raw : ReturnSeries, optional
        Unadjusted returns on the same timestamps, stored on each event.
    """
    need = config.required_length
    if len(series) < need:
        raise ConfigurationError(
            f"{series.asset_id}: series has {len(series)} returns, detection needs at least {need}"
        )
    raw_returns = series.returns if raw is None else raw.returns
    if raw is not None and not np.array_equal(raw.timestamps, series.timestamps):
        raise ConfigurationError(f"{series.asset_id}: raw and adjusted series are not aligned")

    dense, idx = _dense(series, session)
    scale = rolling_bipower_scale(dense, config.window_k)[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        stat = series.returns / scale
    tested = np.isfinite(stat) & (scale > 0)
    n = int(tested.sum())
    if n < 3:
        raise ConfigurationError(f"{series.asset_id}: only {n} testable returns")
    location, s_n = max_statistic_constants(n)
    beta = gumbel_critical_value(config.alpha)
    with np.errstate(invalid="ignore"):
        flagged = tested & ((np.abs(stat) - location) / s_n > beta)
    return [
        JumpEvent(
            series.asset_id,
            int(series.timestamps[i]),
            float(stat[i]),
            1 if stat[i] > 0 else -1,
            float(raw_returns[i]),
        )
        for i in np.flatnonzero(flagged)
    ]


def detect_asset(series: ReturnSeries, config: DetectorConfig,
                 session: SessionConfig = DEFAULT_SESSION) -> list[JumpEvent]:
    """Periodicity adjustment followed by detection for one asset."""
    try:
        profile = estimate_periodicity(series, session, config.periodicity_pool,
                                       scale=config.periodicity_scale)
    except ConfigurationError as exc:
        log.warning("%s; using a flat periodicity profile", exc)
        profile = PeriodicityProfile.flat(session.bucket_count)
    adjusted = deseasonalize(series, profile, session)
    return detect_jumps(adjusted, config, session, raw=series)


def detect_panel(panel: PricePanel, config: DetectorConfig = DetectorConfig(),
                 threads: int = 1) -> list[JumpEvent]:
    """Run :func:`detect_asset` over every asset; events ordered by (asset, timestamp).

    Assets with too few returns are skipped with a logged warning.
    """
    def one(asset):
        series = panel.series(asset)
        if len(series) < config.required_length:
            log.warning("%s: %d returns, below the %d required; skipped",
                        asset, len(series), config.required_length)
            return []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return detect_asset(series, config, panel.session)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_asset = list(pool.map(one, panel.assets))
    events = [e for evs in per_asset for e in evs]
    events.sort(key=lambda e: (e.asset_id, e.timestamp))
    return events
