"""
CSV artifacts.

Every artifact starts with ``# key=value`` comment lines (at least
``config_hash`` and ``seed``) followed by a header row. Floats are written
with ``repr`` so they read back bit-for-bit; NaN is written as an empty
field. Member and direction lists inside one field are ``;``-separated.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cojump import CoCrashEvent, CrashFrequencyTable
from .errors import DataError, EmptyInputError, ParseError
from .jumps import JumpEvent
from .marketdata import format_timestamp, parse_timestamp
from .ranks import CorrelationCurve, SteadyState

JUMPS = "jumps.csv"
ASSETS = "assets.csv"
PANEL = "panel.csv"
COCRASH_EVENTS = "cocrash_events.csv"
CRASH_FREQUENCY = "crash_frequency.csv"
SIZE_DISTRIBUTION = "size_distribution.csv"
RANK_CURVES = "rank_corr_curves.csv"
STEADY_STATE = "steady_state.csv"
SIGNIFICANCE = "significance.csv"
DTV_BY_SIZE = "dtv_by_size.csv"
VOL_FREQ_CORR = "vol_freq_corr.csv"
LIQUID_FRACTION = "liquid_fraction.csv"
GROUND_TRUTH = "ground_truth.csv"
REPORT = "report_by_size.csv"

FIGURE_ARTIFACTS = (
    COCRASH_EVENTS, CRASH_FREQUENCY, SIZE_DISTRIBUTION, RANK_CURVES, STEADY_STATE,
    SIGNIFICANCE, DTV_BY_SIZE, VOL_FREQ_CORR, LIQUID_FRACTION,
)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "" if math.isnan(value) else repr(value)
    return str(value)


def parse_float(text: str) -> float:
    return math.nan if text == "" else float(text)


def parse_bool(text: str) -> bool:
    if text not in ("true", "false"):
        raise ValueError(f"expected true or false, got {text!r}")
    return text == "true"


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict) -> Path:
    """Write ``rows`` under a ``# key=value`` preamble; keys are written sorted."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}={meta[key]}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_csv(path, columns: Sequence[str] | None = None) -> tuple[dict, list[dict]]:
    """Read an artifact back as ``(meta, rows)`` with rows as string dicts.

    Raises
    ------
    ParseError
        On a header that differs from ``columns`` or a ragged row.
    """
    path = Path(path)
    meta: dict[str, str] = {}
    rows: list[dict] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            if header is None and row and row[0].startswith("#"):
                key, _, value = ",".join(row)[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = row
                if columns is not None and tuple(header) != tuple(columns):
                    raise ParseError(
                        f"expected columns {','.join(columns)}, got {','.join(header)}",
                        line=reader.line_num, path=path,
                    )
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}",
                                 line=reader.line_num, path=path)
            rows.append(dict(zip(header, row)))
    if header is None:
        raise EmptyInputError(f"{path}: no header row")
    return meta, rows


def read_meta(path) -> dict:
    """Only the ``# key=value`` preamble of an artifact."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    return meta


# Per-asset jumps ---------------------------------------------------------

JUMP_COLUMNS = ("symbol", "timestamp", "statistic", "direction", "raw_return")


def write_jumps(path, events: Sequence[JumpEvent], meta: dict) -> Path:
    rows = (
        (e.asset_id, format_timestamp(e.timestamp), e.statistic, e.direction, e.raw_return)
        for e in events
    )
    return write_csv(path, JUMP_COLUMNS, rows, meta)


def read_jumps(path) -> list[JumpEvent]:
    _, rows = read_csv(path, JUMP_COLUMNS)
    try:
        return [
            JumpEvent(r["symbol"], parse_timestamp(r["timestamp"]) // 60, float(r["statistic"]),
                      int(r["direction"]), float(r["raw_return"]))
            for r in rows
        ]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# Asset universe with average daily dollar volume --------------------------

ASSET_COLUMNS = ("symbol", "dtv", "n_returns")


def write_assets(path, assets: Sequence[str], dtv: Sequence[float], n_returns: Sequence[int],
                 meta: dict) -> Path:
    return write_csv(path, ASSET_COLUMNS, zip(assets, dtv, n_returns), meta)


def read_assets(path) -> tuple[tuple, np.ndarray]:
    _, rows = read_csv(path, ASSET_COLUMNS)
    return tuple(r["symbol"] for r in rows), np.array([float(r["dtv"]) for r in rows])


# Co-crash events ------------------------------------------------------------

COCRASH_COLUMNS = ("timestamp", "size", "members", "directions")


def _event_fields(e: CoCrashEvent) -> tuple:
    dirs = e.direction_map()
    members = sorted(e.members)
    return (";".join(members), ";".join(str(dirs[m]) for m in members) if dirs else "")


def _parse_event(r: dict) -> CoCrashEvent:
    members = r["members"].split(";")
    dirs = [int(d) for d in r["directions"].split(";")] if r["directions"] else []
    if dirs and len(dirs) != len(members):
        raise DataError(f"event at {r['timestamp']}: {len(members)} members, {len(dirs)} directions")
    event = CoCrashEvent(parse_timestamp(r["timestamp"]) // 60, frozenset(members),
                         tuple(zip(members, dirs)))
    if event.size_m != int(r["size"]):
        raise DataError(f"event at {r['timestamp']}: size {r['size']} but {event.size_m} members")
    return event


def write_cocrash(path, events: Sequence[CoCrashEvent], meta: dict) -> Path:
    rows = ((format_timestamp(e.timestamp), e.size_m) + _event_fields(e) for e in events)
    return write_csv(path, COCRASH_COLUMNS, rows, meta)


def read_cocrash(path) -> list[CoCrashEvent]:
    _, rows = read_csv(path, COCRASH_COLUMNS)
    return [_parse_event(r) for r in rows]


# Crash-frequency table (dense) ----------------------------------------------

FREQUENCY_COLUMNS = ("symbol", "size", "count")


def write_frequency(path, table: CrashFrequencyTable, meta: dict) -> Path:
    def rows():
        for i, sym in enumerate(table.asset_universe):
            for m in range(1, table.max_size + 1):
                yield sym, m, table.counts[i, m - 1]
    return write_csv(path, FREQUENCY_COLUMNS, rows(), meta)


def read_frequency(path) -> CrashFrequencyTable:
    """Rebuild the table; event counts follow from ``f_m / m``."""
    _, rows = read_csv(path, FREQUENCY_COLUMNS)
    assets: dict[str, int] = {}
    entries = []
    for r in rows:
        assets.setdefault(r["symbol"], len(assets))
        entries.append((assets[r["symbol"]], int(r["size"]), int(r["count"])))
    max_size = max((m for _, m, _ in entries), default=0)
    counts = np.zeros((len(assets), max_size), dtype=np.int64)
    for i, m, c in entries:
        counts[i, m - 1] = c
    sizes = np.arange(1, max_size + 1)
    marginal = counts.sum(axis=0)
    if np.any(marginal % sizes):
        raise DataError(f"{path}: column totals are not multiples of the crash size")
    return CrashFrequencyTable(tuple(assets), counts, marginal // sizes)


# Figure tables ------------------------------------------------------------

def write_size_distribution(path, events: np.ndarray, ccdf: np.ndarray, meta: dict) -> Path:
    rows = ((m, e, c) for m, (e, c) in enumerate(zip(events.tolist(), ccdf.tolist()), start=1))
    return write_csv(path, ("m", "f_m_events", "ccdf"), rows, meta)


def write_curves(path, curves: Sequence[CorrelationCurve], meta: dict) -> Path:
    rows = (
        (c.base_size, int(t), float(r))
        for c in curves for t, r in zip(c.taus.tolist(), c.rhos.tolist())
    )
    return write_csv(path, ("m", "tau", "rho"), rows, meta)


def read_curves(path) -> list[CorrelationCurve]:
    _, rows = read_csv(path, ("m", "tau", "rho"))
    grouped: dict[int, list] = {}
    for r in rows:
        grouped.setdefault(int(r["m"]), []).append((int(r["tau"]), parse_float(r["rho"])))
    return [
        CorrelationCurve(m, np.array([t for t, _ in pts], dtype=np.int64),
                         np.array([v for _, v in pts], dtype=np.float64))
        for m, pts in sorted(grouped.items())
    ]


def write_steady_state(path, states: Sequence[SteadyState], meta: dict) -> Path:
    rows = ((s.base_size, s.mean_rho, s.n_points, s.truncated) for s in states)
    return write_csv(path, ("m", "mean_rho", "n_points", "truncated"), rows, meta)


def read_steady_state(path) -> list[SteadyState]:
    _, rows = read_csv(path, ("m", "mean_rho", "n_points", "truncated"))
    return [
        SteadyState(int(r["m"]), parse_float(r["mean_rho"]), int(r["n_points"]), parse_bool(r["truncated"]))
        for r in rows
    ]


SIGNIFICANCE_COLUMNS = ("m", "statistic", "tau", "observed_rho", "quantile", "n_samples", "seed",
                        "n_gaps", "degenerate")


def write_significance(path, rows: Iterable[Sequence], meta: dict) -> Path:
    return write_csv(path, SIGNIFICANCE_COLUMNS, rows, meta)


def write_dtv(path, rows: Iterable[Sequence], meta: dict) -> Path:
    return write_csv(path, ("m", "dtv_m"), rows, meta)


def write_vol_freq(path, rows: Iterable[Sequence], meta: dict) -> Path:
    return write_csv(path, ("m", "rho", "significant", "p_value"), rows, meta)


def write_liquid_fraction(path, rows: Iterable[Sequence], meta: dict) -> Path:
    return write_csv(path, ("m", "fraction", "k"), rows, meta)


# Simulation ground truth ------------------------------------------------------

GROUND_TRUTH_COLUMNS = ("timestamp", "size", "regime", "members", "directions")


def write_ground_truth(path, events: Sequence[CoCrashEvent], regimes: dict, meta: dict) -> Path:
    rows = (
        (format_timestamp(e.timestamp), e.size_m, regimes[e.timestamp]) + _event_fields(e)
        for e in events
    )
    return write_csv(path, GROUND_TRUTH_COLUMNS, rows, meta)


def read_ground_truth(path) -> tuple[list[CoCrashEvent], dict]:
    """Planted events and a timestamp -> regime map."""
    _, rows = read_csv(path, GROUND_TRUTH_COLUMNS)
    events = [_parse_event(r) for r in rows]
    regimes = {e.timestamp: r["regime"] for e, r in zip(events, rows)}
    return events, regimes
