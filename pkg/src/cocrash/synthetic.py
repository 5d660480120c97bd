"""
Synthetic minute-bar markets with planted co-crashes.

Returns are Gaussian with a deterministic minute-of-week volatility shape.
Scheduled co-crash events add a jump of ``jump_magnitude`` local standard
deviations, all members moving in the event's direction. Members of small
events come from the fragile set and members of large events from the
systemic set, drawn without replacement in proportion to a fixed per-asset
propensity. Dollar volumes are tiered: systemic assets trade the most,
fragile assets next, everything else least.
"""
from __future__ import annotations

import configparser
import datetime as dt
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .cojump import CoCrashEvent
from .errors import ConfigurationError, PlanError
from .marketdata import (
    DEFAULT_SESSION,
    MINUTES_PER_DAY,
    PricePanel,
    SessionConfig,
    format_timestamp,
    parse_timestamp,
)
from .nullmodel import successive_draws
from .rng import SIMULATION_STREAM, substream

REGIMES = ("fragile", "systemic")
DEFAULT_START = dt.date(2017, 1, 9)

# substream keys under SIMULATION_STREAM
_NOISE, _EVENTS, _LEVELS, _SCHEDULE, _VOLUME, _MISSING = range(6)


def symbols(n: int) -> tuple:
    width = max(3, len(str(n - 1)))
    return tuple(f"A{i:0{width}d}" for i in range(n))


def u_shape(session: SessionConfig = DEFAULT_SESSION, open_minutes: int = 30,
            open_multiplier: float = 2.0, close_minutes: int = 30,
            close_multiplier: float = 1.5) -> np.ndarray:
    """Bucket multipliers: elevated after the open and before the close, 1 elsewhere."""
    per_day = session.minutes_per_day
    day = np.ones(per_day)
    day[:open_minutes] = open_multiplier
    if close_minutes:
        day[per_day - close_minutes:] = close_multiplier
    return np.tile(day, 5)


@dataclass(frozen=True, eq=False)
class SimulationPlan:
    n_assets: int
    n_weeks: int
    base_vol: float = 5e-4
    periodicity_shape: np.ndarray | None = None
    fragile_set: frozenset = frozenset()
    systemic_set: frozenset = frozenset()
    event_schedule: tuple = ()
    jump_magnitude: float = 15.0
    seed: int = 0
    start_date: dt.date = DEFAULT_START
    session: SessionConfig = DEFAULT_SESSION
    propensity: np.ndarray | None = None
    dtv_levels: np.ndarray | None = None
    missing_rate: float = 0.0
    propensity_spread: float = 0.5
    assets: tuple = field(default=())

    def __post_init__(self):
        if self.n_assets < 1 or self.n_weeks < 1:
            raise PlanError("plan needs at least one asset and one week")
        if not self.assets:
            object.__setattr__(self, "assets", symbols(self.n_assets))
        if len(self.assets) != self.n_assets:
            raise PlanError("assets list does not match n_assets")
        object.__setattr__(self, "fragile_set", frozenset(self.fragile_set))
        object.__setattr__(self, "systemic_set", frozenset(self.systemic_set))
        if self.fragile_set & self.systemic_set:
            raise PlanError("fragile and systemic sets must be disjoint")
        unknown = (self.fragile_set | self.systemic_set) - set(self.assets)
        if unknown:
            raise PlanError(f"sets name unknown assets: {sorted(unknown)[:5]}")
        if not self.base_vol > 0 or self.jump_magnitude < 0:
            raise PlanError("base_vol must be positive and jump_magnitude non-negative")
        if not 0 <= self.missing_rate < 1:
            raise PlanError("missing_rate must lie in [0, 1)")
        shape = self.periodicity_shape
        if shape is None:
            shape = np.ones(self.session.bucket_count)
        shape = np.asarray(shape, dtype=np.float64)
        if shape.shape != (self.session.bucket_count,) or np.any(shape <= 0):
            raise PlanError(f"periodicity shape needs {self.session.bucket_count} positive multipliers")
        object.__setattr__(self, "periodicity_shape", shape)
        schedule = []
        for entry in self.event_schedule:
            ts, m, regime = entry
            if regime not in REGIMES:
                raise PlanError(f"unknown regime {regime!r}")
            if int(m) < 1:
                raise PlanError("event size must be >= 1")
            pool = self.fragile_set if regime == "fragile" else self.systemic_set
            if int(m) > len(pool):
                raise PlanError(f"event of size {m} exceeds the {regime} set ({len(pool)} assets)")
            schedule.append((int(ts), int(m), regime))
        object.__setattr__(self, "event_schedule", tuple(schedule))

    @property
    def days(self) -> list[int]:
        return self.session.session_days(self.start_date, 5 * self.n_weeks)

    def propensities(self) -> np.ndarray:
        if self.propensity is not None:
            p = np.asarray(self.propensity, dtype=np.float64)
            if p.shape != (self.n_assets,) or np.any(p <= 0):
                raise PlanError("propensity needs one positive weight per asset")
            return p
        rng = substream(self.seed, SIMULATION_STREAM, _LEVELS, 0)
        return rng.lognormal(0.0, self.propensity_spread, self.n_assets)

    def volume_levels(self) -> np.ndarray:
        """Target average daily dollar volume per asset."""
        if self.dtv_levels is not None:
            v = np.asarray(self.dtv_levels, dtype=np.float64)
            if v.shape != (self.n_assets,) or np.any(v < 0):
                raise PlanError("dtv_levels needs one non-negative value per asset")
            return v
        rng = substream(self.seed, SIMULATION_STREAM, _LEVELS, 1)
        tiers = {"systemic": (8.0, 9.0), "fragile": (6.5, 7.5), "other": (5.0, 6.0)}
        levels = np.empty(self.n_assets)
        for i, a in enumerate(self.assets):
            tier = "systemic" if a in self.systemic_set else "fragile" if a in self.fragile_set else "other"
            lo, hi = tiers[tier]
            levels[i] = 10.0 ** rng.uniform(lo, hi)
        return levels


class GroundTruth(NamedTuple):
    events: list
    jumps: dict


def _return_grid(plan: SimulationPlan) -> tuple[np.ndarray, np.ndarray]:
    s = plan.session
    bars = np.concatenate([s.bar_minutes(d) for d in plan.days])
    return bars, s.is_return_minute(bars)


def simulate(plan: SimulationPlan) -> tuple[PricePanel, GroundTruth]:
    """Draw a panel from ``plan`` together with the planted co-crashes."""
    s = plan.session
    grid, has_return = _return_grid(plan)
    n, T = plan.n_assets, grid.size
    sigma = np.zeros(T)
    sigma[has_return] = plan.base_vol * plan.periodicity_shape[s.bucket(grid[has_return])]

    rets = np.zeros((n, T))
    for i in range(n):
        z = substream(plan.seed, SIMULATION_STREAM, _NOISE, i).standard_normal(int(has_return.sum()))
        rets[i, has_return] = z * sigma[has_return]

    index = {a: i for i, a in enumerate(plan.assets)}
    slot = {int(t): k for k, t in enumerate(grid)}
    prop = plan.propensities()
    pools = {
        r: np.array(sorted(index[a] for a in (plan.fragile_set if r == "fragile" else plan.systemic_set)), dtype=np.int64)
        for r in REGIMES
    }
    rng = substream(plan.seed, SIMULATION_STREAM, _EVENTS, 0)
    planted: dict[int, dict] = {}
    for ts, m, regime in plan.event_schedule:
        k = slot.get(ts)
        if k is None or not has_return[k]:
            raise PlanError(f"event at {format_timestamp(ts)} is not a simulated return minute")
        pool = pools[regime]
        members = pool[successive_draws(prop[pool], rng, 1)[0][:m]]
        direction = 1 if rng.random() < 0.5 else -1
        at = planted.setdefault(ts, {})
        for i in members:
            sym = plan.assets[i]
            if sym in at:
                raise PlanError(f"{sym} scheduled twice at {format_timestamp(ts)}")
            at[sym] = direction
            rets[i, k] += direction * plan.jump_magnitude * sigma[k]

    keep = np.ones((n, T), dtype=bool)
    if plan.missing_rate > 0:
        keep = substream(plan.seed, SIMULATION_STREAM, _MISSING, 0).random((n, T)) >= plan.missing_rate
        for ts, at in planted.items():
            k = slot[ts]
            for sym in at:
                keep[index[sym], k - 1:k + 1] = True

    start = substream(plan.seed, SIMULATION_STREAM, _LEVELS, 2).uniform(math.log(20), math.log(200), n)
    log_price = start[:, None] + np.cumsum(rets, axis=1)
    prices = np.where(keep, np.exp(log_price), np.nan)

    per_day = s.minutes_per_day + 1
    noise = substream(plan.seed, SIMULATION_STREAM, _VOLUME, 0).lognormal(-0.125, 0.5, (n, T))
    volume = plan.volume_levels()[:, None] / per_day * noise
    volume = np.where(keep, volume, np.nan)

    panel = PricePanel.from_prices(plan.assets, grid, prices, volume, s)
    events = [
        CoCrashEvent(ts, frozenset(at), tuple(at.items())) for ts, at in sorted(planted.items())
    ]
    jumps: dict[str, list] = {}
    for ev in events:
        for sym, d in ev.directions:
            jumps.setdefault(sym, []).append((ev.timestamp, d))
    return panel, GroundTruth(events, jumps)


class Score(NamedTuple):
    precision: float
    recall: float
    size_confusion: Counter


def score(detected: Sequence[CoCrashEvent], truth: GroundTruth | Sequence[CoCrashEvent]) -> Score:
    """Event-level precision and recall; an event matches on timestamp and exact member set.

    ``size_confusion[(planted, detected)]`` counts planted events that were
    not matched; ``detected`` is 0 when nothing was flagged at that minute.
    Precision (recall) is NaN when nothing was detected (planted).
    """
    truth_events = truth.events if isinstance(truth, GroundTruth) else list(truth)
    found = {e.timestamp: e.members for e in detected}
    matched = 0
    confusion: Counter = Counter()
    for e in truth_events:
        got = found.get(e.timestamp)
        if got == e.members:
            matched += 1
        else:
            confusion[(e.size_m, len(got) if got else 0)] += 1
    precision = matched / len(detected) if detected else math.nan
    recall = matched / len(truth_events) if truth_events else math.nan
    return Score(precision, recall, confusion)


def candidate_minutes(plan: SimulationPlan, skip_days: int = 1) -> np.ndarray:
    """Return minutes eligible for planted events, after a warm-up of ``skip_days``."""
    grid, has_return = _return_grid(plan)
    first = plan.days[skip_days] * MINUTES_PER_DAY if len(plan.days) > skip_days else grid[-1] + 1
    return grid[has_return & (grid >= first)]


def spaced_minutes(candidates: np.ndarray, count: int, rng: np.random.Generator,
                   gap: int = 3) -> np.ndarray:
    """``count`` distinct minutes at least ``gap`` apart, sampled from ``candidates``."""
    chosen: list[int] = []
    taken: set[int] = set()
    for t in rng.permutation(candidates):
        t = int(t)
        if any(t + d in taken for d in range(-gap + 1, gap)):
            continue
        chosen.append(t)
        taken.add(t)
        if len(chosen) == count:
            return np.sort(np.array(chosen, dtype=np.int64))
    raise PlanError(f"cannot place {count} events {gap} minutes apart")


def two_regime_counts(max_size: int, base_count: float = 1000.0, exponent: float = 1.2,
                      min_count: int = 30) -> dict:
    """Events per size: a power law in ``m`` floored at ``min_count``."""
    return {m: max(min_count, int(round(base_count * m ** -exponent))) for m in range(1, max_size + 1)}


def two_regime_plan(n_assets: int = 300, n_weeks: int = 10, m_star: int = 5, max_size: int = 30,
                    systemic_count: int = 120, fragile_count: int = 60, base_count: float = 1000.0,
                    exponent: float = 1.2, min_count: int = 30, jump_magnitude: float = 15.0,
                    base_vol: float = 5e-4, seed: int = 0, session: SessionConfig = DEFAULT_SESSION,
                    periodicity_shape=None, start_date: dt.date = DEFAULT_START,
                    missing_rate: float = 0.0, propensity_spread: float = 0.5) -> SimulationPlan:
    """Plan whose events below ``m_star`` hit fragile assets and the rest systemic ones.

    The first ``systemic_count`` symbols are systemic and the next
    ``fragile_count`` fragile. With the default volume tiers, equal systemic
    and remaining counts put the fragile tier at the median volume, so small
    crashes carry no volume signal.
    """
    if systemic_count + fragile_count > n_assets:
        raise PlanError("systemic and fragile sets exceed the universe")
    assets = symbols(n_assets)
    systemic = frozenset(assets[:systemic_count])
    fragile = frozenset(assets[systemic_count:systemic_count + fragile_count])
    shape = u_shape(session) if periodicity_shape is None else periodicity_shape
    extra = dict(missing_rate=missing_rate, propensity_spread=propensity_spread)
    draft = SimulationPlan(n_assets, n_weeks, base_vol, shape, fragile, systemic, (),
                           jump_magnitude, seed, start_date, session, **extra)
    counts = two_regime_counts(max_size, base_count, exponent, min_count)
    rng = substream(seed, SIMULATION_STREAM, _SCHEDULE, 0)
    minutes = spaced_minutes(candidate_minutes(draft), sum(counts.values()), rng)
    sizes = np.concatenate([np.full(c, m) for m, c in counts.items()])
    sizes = sizes[rng.permutation(sizes.size)]
    schedule = tuple(
        (int(t), int(m), "fragile" if m < m_star else "systemic") for t, m in zip(minutes, sizes)
    )
    return SimulationPlan(n_assets, n_weeks, base_vol, shape, fragile, systemic, schedule,
                          jump_magnitude, seed, start_date, session, **extra)


def _asset_set(text: str) -> frozenset:
    return frozenset(s.strip() for s in text.split(",") if s.strip())


def load_plan(path, seed: int | None = None) -> SimulationPlan:
    """Read a plan file: ``[plan]`` parameters, optional ``[periodicity]``,
    ``[session]``, and either a generated ``[schedule]`` or explicit ``[events]``
    lines of the form ``2017-01-10T10:15 = 3, fragile``. ``seed`` overrides
    the file's seed.
    """
    # event keys are timestamps, so ':' cannot act as a delimiter
    parser = configparser.ConfigParser(delimiters=("=",))
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise ConfigurationError(f"cannot read plan file {path}")
    if not parser.has_section("plan"):
        raise PlanError(f"{path}: missing [plan] section")
    p = parser["plan"]
    session = SessionConfig.from_section(parser["session"]) if parser.has_section("session") else DEFAULT_SESSION
    shape = None
    if parser.has_section("periodicity"):
        q = parser["periodicity"]
        shape = u_shape(session, q.getint("open_minutes", 30), q.getfloat("open_multiplier", 2.0),
                        q.getint("close_minutes", 30), q.getfloat("close_multiplier", 1.5))
    common = dict(
        n_assets=p.getint("n_assets"),
        n_weeks=p.getint("n_weeks", 10),
        base_vol=p.getfloat("base_vol", 5e-4),
        jump_magnitude=p.getfloat("jump_magnitude", 15.0),
        seed=p.getint("seed", 0) if seed is None else int(seed),
        start_date=dt.date.fromisoformat(p.get("start_date", DEFAULT_START.isoformat())),
        session=session,
        missing_rate=p.getfloat("missing_rate", 0.0),
        propensity_spread=p.getfloat("propensity_spread", 0.5),
    )
    if parser.has_section("schedule"):
        q = parser["schedule"]
        return two_regime_plan(
            systemic_count=p.getint("systemic_count", 120),
            fragile_count=p.getint("fragile_count", 60),
            m_star=q.getint("m_star", 5),
            max_size=q.getint("max_size", 30),
            base_count=q.getfloat("base_count", 1000.0),
            exponent=q.getfloat("exponent", 1.2),
            min_count=q.getint("min_count", 30),
            periodicity_shape=shape,
            **common,
        )
    assets = symbols(common["n_assets"])
    systemic = _asset_set(p.get("systemic_set", ""))
    fragile = _asset_set(p.get("fragile_set", ""))
    if not systemic and "systemic_count" in p:
        systemic = frozenset(assets[:p.getint("systemic_count")])
    if not fragile and "fragile_count" in p:
        start = len(systemic)
        fragile = frozenset(assets[start:start + p.getint("fragile_count")])
    events = []
    if parser.has_section("events"):
        for stamp, entry in parser["events"].items():
            try:
                size, regime = (x.strip() for x in entry.split(","))
                events.append((parse_timestamp(stamp) // 60, int(size), regime))
            except ValueError as exc:
                raise PlanError(f"{path}: bad event line {stamp} = {entry}") from exc
    return SimulationPlan(
        common["n_assets"], common["n_weeks"], common["base_vol"], shape, fragile, systemic,
        tuple(events), common["jump_magnitude"], common["seed"], common["start_date"],
        session, missing_rate=common["missing_rate"],
        propensity_spread=common["propensity_spread"],
    )
