"""Grouping of per-asset jumps into co-crash events and crash-frequency accounting."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, EmptyInputError, RangeError
from .jumps import JumpEvent

DIRECTIONS = ("both", "down", "up")


@dataclass(frozen=True)
class CoCrashEvent:
    timestamp: int
    members: frozenset
    directions: tuple = ()

    def __post_init__(self):
        members = frozenset(self.members)
        if not members:
            raise DataError("co-crash event must have at least one member")
        object.__setattr__(self, "members", members)
        dirs = dict(self.directions)
        if dirs and set(dirs) != members:
            raise DataError("directions must cover exactly the event members")
        object.__setattr__(self, "directions", tuple(sorted(dirs.items())))

    @property
    def size_m(self) -> int:
        return len(self.members)

    def direction_map(self) -> dict:
        return dict(self.directions)


def filter_direction(events: Iterable[JumpEvent], direction: str = "both") -> list[JumpEvent]:
    """Keep all jumps, only down-jumps, or only up-jumps."""
    if direction not in DIRECTIONS:
        raise ConfigurationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if direction == "both":
        return list(events)
    want = -1 if direction == "down" else 1
    return [e for e in events if e.direction == want]


def group_events(events: Iterable[JumpEvent]) -> list[CoCrashEvent]:
    """One co-crash per minute with at least one jump, ordered by timestamp."""
    by_minute: dict[int, dict] = {}
    for e in events:
        members = by_minute.setdefault(e.timestamp, {})
        if e.asset_id in members:
            raise DataError(f"duplicate jump for {e.asset_id} at minute {e.timestamp}")
        members[e.asset_id] = e.direction
    return [
        CoCrashEvent(t, frozenset(m), tuple(m.items()))
        for t, m in sorted(by_minute.items())
    ]


@dataclass(frozen=True, eq=False)
class CrashFrequencyTable:
    """Counts ``f[x, m]``: co-crashes of exactly ``m`` members that include asset ``x``.

    ``counts[i, m - 1]`` holds the count for ``asset_universe[i]``.
    """

    asset_universe: tuple
    counts: np.ndarray
    event_counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "asset_universe", tuple(self.asset_universe))
        counts = np.array(self.counts, dtype=np.int64)
        events = np.array(self.event_counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != len(self.asset_universe):
            raise DataError("counts must be assets x sizes")
        if events.shape != (counts.shape[1],):
            raise DataError("event_counts must have one entry per size")
        if (counts < 0).any() or (events < 0).any():
            raise DataError("counts must be non-negative")
        sizes = np.arange(1, counts.shape[1] + 1)
        if not np.array_equal(counts.sum(axis=0), sizes * events):
            raise DataError("marginal f_m must equal m times the event count at every size")
        counts.setflags(write=False)
        events.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "event_counts", events)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.asset_universe)})

    @property
    def max_size(self) -> int:
        return int(self.counts.shape[1])

    @property
    def n_assets(self) -> int:
        return len(self.asset_universe)

    def _check_size(self, m: int) -> None:
        if not 1 <= m <= self.max_size:
            raise RangeError(f"crash size {m} outside 1..{self.max_size}")

    def column(self, m: int) -> np.ndarray:
        """Per-asset counts at size ``m`` in universe order."""
        self._check_size(m)
        return self.counts[:, m - 1]

    def f(self, asset: str, m: int) -> int:
        self._check_size(m)
        return int(self.counts[self._index[asset], m - 1])

    def marginal(self, m: int) -> int:
        """``f_m``, the sum of ``f[x, m]`` over assets."""
        return int(self.column(m).sum())

    def marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def totals(self) -> dict:
        """Jumps per asset summed over sizes."""
        return dict(zip(self.asset_universe, self.counts.sum(axis=1).tolist()))

    def sizes_with_events(self) -> list[int]:
        return [int(m) + 1 for m in np.flatnonzero(self.event_counts)]


def build_frequency_table(cocrashes: Sequence[CoCrashEvent],
                          universe: Sequence[str]) -> CrashFrequencyTable:
    universe = tuple(universe)
    index = {a: i for i, a in enumerate(universe)}
    if len(index) != len(universe):
        raise DataError("duplicate symbols in universe")
    max_size = max((e.size_m for e in cocrashes), default=0)
    counts = np.zeros((len(universe), max_size), dtype=np.int64)
    n_events = np.zeros(max_size, dtype=np.int64)
    for e in cocrashes:
        col = e.size_m - 1
        n_events[col] += 1
        for member in e.members:
            try:
                counts[index[member], col] += 1
            except KeyError:
                raise DataError(f"co-crash member {member!r} is not in the asset universe") from None
    return CrashFrequencyTable(universe, counts, n_events)


def size_distribution(table: CrashFrequencyTable) -> tuple[np.ndarray, np.ndarray]:
    """Event counts by size and their tail cumulative, over ``m = 1..max_size``.

    Returns
    -------
    f_m_events : ndarray
        ``f_m_events[m - 1]`` is the number of co-crashes with exactly ``m`` members.
    ccdf : ndarray
        ``ccdf[m - 1]`` is the number of co-crashes with at least ``m`` members.
    """
    if table.max_size == 0:
        raise EmptyInputError("crash frequency table is empty")
    events = table.event_counts.copy()
    tail = np.cumsum(events[::-1])[::-1]
    return events, tail


def size_counts(cocrashes: Iterable[CoCrashEvent]) -> Counter:
    return Counter(e.size_m for e in cocrashes)
