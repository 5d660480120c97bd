"""
Minute-bar ingestion and panel alignment.

Timestamps are integer minutes since 1970-01-01 00:00 in exchange-local wall
time; no timezone conversion is ever applied. A session day contributes the
bars stamped ``open..close`` inclusive, so the first return of a day is stamped
``open + 1`` and each day carries ``close - open`` return minutes. Overnight
and weekend pairs never produce a return, and neither does any pair of bars
that are not in consecutive minutes (untraded minutes are missing, not filled).
"""
from __future__ import annotations

import configparser
import csv
import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    EmptyInputError,
    LookupFailure,
    ParseError,
)

MINUTES_PER_DAY = 1440
_EPOCH = dt.datetime(1970, 1, 1)
# 1970-01-01 was a Thursday; weekday() convention Monday == 0.
_EPOCH_WEEKDAY = 3

CSV_HEADER = ("symbol", "timestamp", "price", "dollar_volume")
SNAPSHOT_HEADER = CSV_HEADER + ("missing",)


def parse_timestamp(text: str) -> int:
    """ISO-8601 string to integer seconds since epoch (local wall time)."""
    stamp = dt.datetime.fromisoformat(text.strip())
    if stamp.tzinfo is not None:
        stamp = stamp.replace(tzinfo=None)
    return int((stamp - _EPOCH).total_seconds())


def format_timestamp(minute: int) -> str:
    return (_EPOCH + dt.timedelta(minutes=int(minute))).strftime("%Y-%m-%dT%H:%M")


def minute_of(date: dt.date, hhmm: str) -> int:
    """Grid minute for a calendar date and ``HH:MM`` wall-clock time."""
    hours, minutes = _parse_hhmm(hhmm)
    return (date - _EPOCH.date()).days * MINUTES_PER_DAY + hours * 60 + minutes


def _parse_hhmm(text: str) -> tuple[int, int]:
    try:
        hours, minutes = (int(p) for p in text.strip().split(":"))
    except ValueError as exc:
        raise ConfigurationError(f"bad HH:MM time {text!r}") from exc
    if not (0 <= hours < 24 and 0 <= minutes < 60):
        raise ConfigurationError(f"bad HH:MM time {text!r}")
    return hours, minutes


@dataclass(frozen=True)
class SessionConfig:
    """Trading calendar: Monday-Friday sessions minus holidays.

    ``open_minute`` and ``close_minute`` are minutes after midnight; bars are
    valid on ``[open, close]`` and returns on ``(open, close]``.
    """

    open_minute: int = 9 * 60 + 30
    close_minute: int = 16 * 60
    holidays: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not 0 <= self.open_minute < self.close_minute < MINUTES_PER_DAY:
            raise ConfigurationError("session must satisfy 0 <= open < close < 24:00")
        object.__setattr__(
            self, "holidays", frozenset(_as_date(d) for d in self.holidays)
        )

    @classmethod
    def from_strings(cls, open_time="09:30", close_time="16:00", holidays=()):
        oh, om = _parse_hhmm(open_time)
        ch, cm = _parse_hhmm(close_time)
        return cls(oh * 60 + om, ch * 60 + cm, frozenset(holidays))

    @classmethod
    def from_file(cls, path) -> "SessionConfig":
        """Read the ``[session]`` section of a key-value config file."""
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigurationError(f"cannot read session config {path}")
        return cls.from_section(parser["session"] if parser.has_section("session") else {})

    @classmethod
    def from_section(cls, section) -> "SessionConfig":
        holidays = [h for h in (s.strip() for s in section.get("holidays", "").split(",")) if h]
        return cls.from_strings(
            section.get("open", "09:30"), section.get("close", "16:00"), holidays
        )

    @property
    def minutes_per_day(self) -> int:
        """Return-bearing minutes per session day."""
        return self.close_minute - self.open_minute

    @property
    def bucket_count(self) -> int:
        """Session return minutes per trading week."""
        return 5 * self.minutes_per_day

    def _holiday_days(self) -> np.ndarray:
        return np.array(
            sorted((d - _EPOCH.date()).days for d in self.holidays), dtype=np.int64
        )

    def is_session_day(self, day) -> np.ndarray:
        day = np.asarray(day, dtype=np.int64)
        weekday = (day + _EPOCH_WEEKDAY) % 7
        return (weekday < 5) & ~np.isin(day, self._holiday_days())

    def is_bar_minute(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.int64)
        mod = ts % MINUTES_PER_DAY
        inside = (mod >= self.open_minute) & (mod <= self.close_minute)
        return inside & self.is_session_day(ts // MINUTES_PER_DAY)

    def is_return_minute(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.int64)
        return self.is_bar_minute(ts) & (ts % MINUTES_PER_DAY != self.open_minute)

    def bucket(self, ts) -> np.ndarray:
        """Minute-of-week bucket index of return timestamps."""
        ts = np.asarray(ts, dtype=np.int64)
        bad = ~self.is_return_minute(ts)
        if bad.any():
            first = int(ts[bad][0]) if ts.ndim else int(ts)
            raise LookupFailure(f"timestamp {format_timestamp(first)} is not a session return minute")
        weekday = (ts // MINUTES_PER_DAY + _EPOCH_WEEKDAY) % 7
        return weekday * self.minutes_per_day + (ts % MINUTES_PER_DAY - self.open_minute - 1)

    def ordinal(self, ts) -> np.ndarray:
        """Position of return timestamps on a gap-free session-minute axis."""
        ts = np.asarray(ts, dtype=np.int64)
        days = (ts // MINUTES_PER_DAY).astype("datetime64[D]")
        holidays = self._holiday_days().astype("datetime64[D]")
        busday = np.busday_count(np.datetime64("1970-01-01"), days, holidays=holidays)
        return busday * self.minutes_per_day + (ts % MINUTES_PER_DAY - self.open_minute - 1)

    def bar_minutes(self, day: int) -> np.ndarray:
        base = int(day) * MINUTES_PER_DAY
        return np.arange(base + self.open_minute, base + self.close_minute + 1, dtype=np.int64)

    def session_days(self, start: dt.date, count: int) -> list[int]:
        """The first ``count`` session days on or after ``start``."""
        day = (start - _EPOCH.date()).days
        out = []
        while len(out) < count:
            if self.is_session_day(day):
                out.append(day)
            day += 1
        return out

    def as_dict(self) -> dict:
        return {
            "open": f"{self.open_minute // 60:02d}:{self.open_minute % 60:02d}",
            "close": f"{self.close_minute // 60:02d}:{self.close_minute % 60:02d}",
            "holidays": sorted(d.isoformat() for d in self.holidays),
        }


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad holiday date {value!r}") from exc


DEFAULT_SESSION = SessionConfig()


@dataclass(frozen=True)
class MinuteBar:
    timestamp: int
    close_price: float
    dollar_volume: float

    def __post_init__(self):
        if not self.close_price > 0:
            raise DataError(f"non-positive price {self.close_price} at {format_timestamp(self.timestamp)}")
        if not self.dollar_volume >= 0:
            raise DataError(f"negative dollar volume at {format_timestamp(self.timestamp)}")


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """One asset's one-minute log returns, stamped at the later bar.

    ``bar_timestamps``/``prices``/``dollar_volumes`` hold the resampled bars
    the returns came from, when known.
    """

    asset_id: str
    timestamps: np.ndarray
    returns: np.ndarray
    bar_timestamps: np.ndarray | None = None
    prices: np.ndarray | None = None
    dollar_volumes: np.ndarray | None = None

    def __post_init__(self):
        ts = _frozen(self.timestamps, np.int64)
        rets = _frozen(self.returns, np.float64)
        if ts.shape != rets.shape or ts.ndim != 1:
            raise DataError(f"{self.asset_id}: timestamps and returns differ in length")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise DataError(f"{self.asset_id}: timestamps not strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "returns", rets)
        if self.bar_timestamps is not None:
            bts = _frozen(self.bar_timestamps, np.int64)
            px = _frozen(self.prices, np.float64)
            dv = _frozen(self.dollar_volumes, np.float64)
            if not (bts.shape == px.shape == dv.shape):
                raise DataError(f"{self.asset_id}: bar arrays differ in length")
            object.__setattr__(self, "bar_timestamps", bts)
            object.__setattr__(self, "prices", px)
            object.__setattr__(self, "dollar_volumes", dv)

    def __len__(self):
        return int(self.timestamps.size)

    def with_returns(self, returns) -> "ReturnSeries":
        return replace(self, returns=returns)

    def bars(self) -> Iterator[MinuteBar]:
        if self.bar_timestamps is None:
            return iter(())
        return (
            MinuteBar(int(t), float(p), float(v))
            for t, p, v in zip(self.bar_timestamps, self.prices, self.dollar_volumes)
        )


def bar_returns(bar_ts: np.ndarray, prices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log returns between bars in consecutive minutes; other pairs are dropped.

    Bars are assumed to be session bars, so a one-minute step never crosses a
    session boundary.
    """
    bar_ts = np.asarray(bar_ts, dtype=np.int64)
    prices = np.asarray(prices, dtype=np.float64)
    if bar_ts.size < 2:
        return np.empty(0, np.int64), np.empty(0, np.float64)
    keep = (np.diff(bar_ts) == 1) & np.isfinite(prices[1:]) & np.isfinite(prices[:-1])
    rets = np.log(prices[1:] / prices[:-1])
    return bar_ts[1:][keep], rets[keep]


def _read_rows(path: Path):
    """Yield ``(line_number, row)`` for data rows, validating the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            line = reader.line_num
            if not row or (row[0].startswith("#") and header is None) or not any(c.strip() for c in row):
                continue
            if header is None:
                header = tuple(c.strip() for c in row)
                if header not in (CSV_HEADER, SNAPSHOT_HEADER):
                    raise ParseError(
                        f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}",
                        line=line,
                        path=path,
                    )
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", line=line, path=path
                )
            yield line, row, len(header) == len(SNAPSHOT_HEADER)
        if header is None:
            raise EmptyInputError(f"{path}: empty file")


def _parse_file(path: Path):
    """Parse one CSV into per-symbol lists of (second, order, price, volume).

    Also returns the minutes of snapshot rows flagged missing, which still
    belong to the panel grid.
    """
    per_symbol: dict[str, list] = {}
    stamp_cache: dict[str, int] = {}
    missing: set[int] = set()
    n_rows = 0
    for line, row, snapshot in _read_rows(path):
        n_rows += 1
        symbol = row[0].strip()
        if not symbol:
            raise ParseError("empty symbol", line=line, path=path)
        if snapshot and row[4].strip() not in ("0", "1"):
            raise ParseError(f"missing flag must be 0 or 1, got {row[4]!r}", line=line, path=path)
        text = row[1]
        seconds = stamp_cache.get(text)
        if seconds is None:
            try:
                seconds = parse_timestamp(text)
            except ValueError as exc:
                raise ParseError(f"bad timestamp {text!r}", line=line, path=path) from exc
            stamp_cache[text] = seconds
        if snapshot and row[4].strip() == "1":
            missing.add(seconds // 60)
            per_symbol.setdefault(symbol, [])
            continue
        try:
            price = float(row[2])
            volume = float(row[3])
        except ValueError as exc:
            raise ParseError(f"non-numeric price or volume in {row!r}", line=line, path=path) from exc
        if not (math.isfinite(price) and price > 0):
            raise DataError(f"{path}:{line}: non-positive price {row[2]!r} for {symbol}")
        if not (math.isfinite(volume) and volume >= 0):
            raise DataError(f"{path}:{line}: negative dollar volume {row[3]!r} for {symbol}")
        per_symbol.setdefault(symbol, []).append((seconds, line, price, volume))
    if n_rows == 0:
        raise EmptyInputError(f"{path}: no data rows")
    return per_symbol, missing


def _resample(symbol: str, records: list, session: SessionConfig) -> ReturnSeries:
    arr = np.array([(r[0], r[1]) for r in records], dtype=np.int64).reshape(-1, 2)
    price = np.array([r[2] for r in records], dtype=np.float64)
    volume = np.array([r[3] for r in records], dtype=np.float64)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    minutes = arr[order, 0] // 60
    price, volume = price[order], volume[order]
    keep = session.is_bar_minute(minutes)
    minutes, price, volume = minutes[keep], price[keep], volume[keep]
    if minutes.size == 0:
        return ReturnSeries(symbol, [], [], [], [], [])
    starts = np.flatnonzero(np.r_[True, np.diff(minutes) != 0])
    ends = np.r_[starts[1:], minutes.size] - 1
    bar_ts = minutes[starts]
    close = price[ends]
    dv = np.add.reduceat(volume, starts)
    ts, rets = bar_returns(bar_ts, close)
    return ReturnSeries(symbol, ts, rets, bar_ts, close, dv)


def ingest_csv(path, session_config: SessionConfig = DEFAULT_SESSION) -> list[ReturnSeries]:
    """Read a trades/bars CSV and resample it to one-minute return series.

    The last row within a minute sets that minute's price; dollar volumes
    within a minute are summed. Rows outside session bar minutes are dropped.
    Snapshot files (with a ``missing`` column) are accepted and their missing
    rows skipped, so a written panel can be read back.

    Returns
    -------
    list of ReturnSeries
        One per symbol, sorted by symbol.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    per_symbol, _ = _parse_file(path)
    return [_resample(sym, per_symbol[sym], session_config) for sym in sorted(per_symbol)]


def _ingest(paths: Sequence, session_config: SessionConfig, threads: int):
    paths = [Path(p) for p in paths]
    if not paths:
        raise EmptyInputError("no input paths given")
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"input file not found: {p}")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parsed = list(pool.map(_parse_file, paths))
    merged: dict[str, list] = {}
    missing: set[int] = set()
    for path, (per_symbol, gaps) in zip(paths, parsed):
        missing |= gaps
        for sym, recs in per_symbol.items():
            if sym in merged:
                raise DataError(f"symbol {sym} appears in more than one input file ({path})")
            merged[sym] = recs
    series = [_resample(sym, merged[sym], session_config) for sym in sorted(merged)]
    gaps = np.array(sorted(missing), dtype=np.int64)
    return series, gaps[session_config.is_bar_minute(gaps)]


def ingest_paths(paths: Sequence, session_config: SessionConfig = DEFAULT_SESSION,
                 threads: int = 1) -> list[ReturnSeries]:
    """Ingest several files (concurrently when ``threads > 1``) and merge by symbol."""
    return _ingest(paths, session_config, threads)[0]


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Assets x grid-minutes matrices; NaN marks a minute without data."""

    assets: tuple
    grid: np.ndarray
    returns: np.ndarray
    dollar_volume: np.ndarray
    prices: np.ndarray | None = None
    session: SessionConfig = DEFAULT_SESSION

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(set(self.assets)) != len(self.assets):
            raise DataError("duplicate asset ids in panel")
        grid = _frozen(self.grid, np.int64)
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise DataError("panel grid must be strictly increasing")
        shape = (len(self.assets), grid.size)
        object.__setattr__(self, "grid", grid)
        for name in ("returns", "dollar_volume", "prices"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = _frozen(value, np.float64)
            if arr.shape != shape:
                raise DataError(f"{name} matrix has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.assets)})

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def index(self, asset: str) -> int:
        try:
            return self._index[asset]
        except KeyError:
            raise LookupFailure(f"unknown asset {asset!r}") from None

    def days(self) -> np.ndarray:
        """Distinct session days covered by the grid."""
        return np.unique(self.grid // MINUTES_PER_DAY)

    def series(self, asset: str) -> ReturnSeries:
        i = self.index(asset)
        row = self.returns[i]
        ok = ~np.isnan(row)
        if self.prices is None:
            return ReturnSeries(asset, self.grid[ok], row[ok])
        has_bar = ~np.isnan(self.prices[i])
        return ReturnSeries(
            asset,
            self.grid[ok],
            row[ok],
            self.grid[has_bar],
            self.prices[i][has_bar],
            self.dollar_volume[i][has_bar],
        )

    @classmethod
    def from_prices(cls, assets, grid, prices, dollar_volume, session=DEFAULT_SESSION):
        """Build a panel from bar prices, deriving returns with the same rule as ingestion."""
        grid = np.asarray(grid, dtype=np.int64)
        prices = np.asarray(prices, dtype=np.float64)
        rets = np.full(prices.shape, np.nan)
        if grid.size > 1:
            step = np.diff(grid) == 1
            with np.errstate(invalid="ignore"):
                r = np.log(prices[:, 1:] / prices[:, :-1])
            r[:, ~step] = np.nan
            rets[:, 1:] = r
        return cls(tuple(assets), grid, rets, dollar_volume, prices, session)

    def to_csv(self, path, header_lines: Iterable[str] = ()) -> None:
        """Snapshot the bars: one row per asset and grid minute, with a missing flag."""
        if self.prices is None:
            raise DataError("panel has no bar prices to export")
        stamps = [format_timestamp(t) for t in self.grid]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(",".join(SNAPSHOT_HEADER) + "\n")
            for i, sym in enumerate(self.assets):
                px = self.prices[i].tolist()
                dv = self.dollar_volume[i].tolist()
                fh.writelines(
                    f"{sym},{stamp},,,1\n" if p != p else f"{sym},{stamp},{p!r},{v!r},0\n"
                    for stamp, p, v in zip(stamps, px, dv)
                )


def align(series: Sequence[ReturnSeries], session: SessionConfig = DEFAULT_SESSION,
          extra_minutes=()) -> PricePanel:
    """Place return series onto a shared minute grid.

    The grid is the sorted union of every series' minutes (bar minutes when
    bars are attached, otherwise return minutes) and ``extra_minutes``.
    """
    series = list(series)
    if len(series) < 2:
        raise ConfigurationError(f"align needs at least 2 series, got {len(series)}")
    with_bars = all(s.bar_timestamps is not None for s in series)

    def minutes(s):
        return s.bar_timestamps if with_bars else s.timestamps

    extra = np.asarray(extra_minutes, dtype=np.int64)
    grid = np.unique(np.concatenate([minutes(s) for s in series] + [extra]))
    shape = (len(series), grid.size)
    rets = np.full(shape, np.nan)
    dv = np.full(shape, np.nan)
    px = np.full(shape, np.nan) if with_bars else None
    for i, s in enumerate(series):
        rets[i, np.searchsorted(grid, s.timestamps)] = s.returns
        if with_bars:
            slots = np.searchsorted(grid, s.bar_timestamps)
            px[i, slots] = s.prices
            dv[i, slots] = s.dollar_volumes
    return PricePanel(tuple(s.asset_id for s in series), grid, rets, dv, px, session)


def average_daily_dollar_volume(panel: PricePanel, asset: str) -> float:
    """Total dollar volume of ``asset`` divided by the panel's session-day count."""
    i = panel.index(asset)
    n_days = panel.days().size
    if n_days == 0:
        return 0.0
    return float(np.nansum(panel.dollar_volume[i]) / n_days)


def load_panel(paths, session: SessionConfig = DEFAULT_SESSION, threads: int = 1) -> PricePanel:
    """Ingest one or more CSV files and align them into a panel."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    series, gaps = _ingest(paths, session, threads)
    return align(series, session, gaps)
