"""Candidate time windows and their scale calibration constants.

A window is a block of consecutive days [start, start + length - 1] inside a
series of length T.  Its rescaled length is h = length / T, so the number of
member days always equals length exactly.  The default family uses windows of
1 to 4 weeks starting on the day grids 1 + 7(j-1) and 4 + 7(j-1); windows that
do not fit inside [1, T] are dropped, not truncated.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_LENGTHS = (7, 14, 21, 28)
DEFAULT_START_OFFSETS = (1, 4)
DEFAULT_START_STRIDE = 7


def scale_constants(h: float) -> tuple[float, float]:
    """Calibration pair (a, b) for a window of rescaled length h.

    a(h) = sqrt(log(e / h)) / log(log(e^e / h)) and b(h) = sqrt(2 log(1 / h)).
    Both are strictly decreasing on (0, 1); at h = 1 the pair is exactly
    (1, 0), so a full-length window is left unweighted.
    """
    if not 0.0 < h <= 1.0:
        raise ConfigError(f"rescaled window length must lie in (0, 1], got {h}")
    if h == 1.0:
        return 1.0, 0.0
    a = math.sqrt(math.log(math.e / h)) / math.log(math.log(math.exp(math.e) / h))
    b = math.sqrt(2.0 * math.log(1.0 / h))
    return a, b


@dataclass(frozen=True)
class Interval:
    """One candidate window: days start_day .. start_day + length_days - 1 (1-based)."""

    start_day: int
    length_days: int
    h: float

    @property
    def end_day(self) -> int:
        return self.start_day + self.length_days - 1

    def days(self) -> range:
        """All member day indices; always exactly length_days of them."""
        return range(self.start_day, self.end_day + 1)

    def contains(self, other: "Interval", proper: bool = False) -> bool:
        inside = self.start_day <= other.start_day and other.end_day <= self.end_day
        if proper:
            return inside and (self.start_day, self.length_days) != (
                other.start_day,
                other.length_days,
            )
        return inside

    def __str__(self) -> str:
        return f"[{self.start_day}, {self.end_day}]"


@dataclass(frozen=True, eq=False)
class IntervalFamily:
    """All candidate windows for one series length, with per-window (a, b).

    Intervals are deduplicated and ordered by (length_days, start_day), so
    the layout of every downstream statistic matrix is reproducible.
    """

    T: int
    intervals: tuple[Interval, ...]
    a: np.ndarray
    b: np.ndarray

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def K(self) -> int:
        return len(self.intervals)

    @cached_property
    def day_lengths(self) -> np.ndarray:
        """Member-day counts per window; equals T * h exactly."""
        return np.array([ival.length_days for ival in self.intervals], dtype=float)

    @cached_property
    def scales(self) -> tuple[float, ...]:
        """Distinct rescaled lengths h, ascending."""
        return tuple(sorted({ival.h for ival in self.intervals}))

    @cached_property
    def _bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([ival.start_day - 1 for ival in self.intervals])
        hi = np.array([ival.end_day for ival in self.intervals])
        return lo, hi

    def fingerprint(self) -> str:
        """Stable hash of the window geometry, used for cache keying."""
        text = f"T={self.T};" + ";".join(
            f"{ival.start_day},{ival.length_days}" for ival in self.intervals
        )
        return hashlib.sha256(text.encode()).hexdigest()


def _start_grid(T: int, offsets: Sequence[int], stride: int) -> list[int]:
    starts: set[int] = set()
    for off in offsets:
        starts.update(range(off, T + 1, stride))
    return sorted(starts)


def build_custom_family(
    T: int,
    lengths: Sequence[int],
    starts: Sequence[int] | None = None,
    *,
    start_offsets: Sequence[int] = DEFAULT_START_OFFSETS,
    start_stride: int = DEFAULT_START_STRIDE,
) -> IntervalFamily:
    """Family over the given window lengths and start rule.

    With starts=None the default grid (offsets 1 and 4, stride 7) is used.
    Windows not fitting inside [1, T] are dropped; duplicates produced by
    overlapping start rules collapse to one window.
    """
    if T < 1:
        raise ConfigError(f"series length must be positive, got {T}")
    lengths = [int(d) for d in lengths]
    if not lengths:
        raise ConfigError("no window lengths given")
    for d in lengths:
        if d < 1 or d > T:
            raise ConfigError(f"window length {d} outside [1, {T}]")
    if starts is None:
        start_list = _start_grid(T, start_offsets, start_stride)
    else:
        start_list = sorted({int(s) for s in starts})
    spans: set[tuple[int, int]] = set()
    for d in sorted(set(lengths)):
        for s in start_list:
            if s >= 1 and s + d - 1 <= T:
                spans.add((d, s))
    if not spans:
        raise ConfigError("empty interval family: no window fits the series")
    ordered = sorted(spans)
    intervals = tuple(Interval(start_day=s, length_days=d, h=d / T) for d, s in ordered)
    ab = [scale_constants(ival.h) for ival in intervals]
    a = np.array([x[0] for x in ab])
    b = np.array([x[1] for x in ab])
    return IntervalFamily(T=T, intervals=intervals, a=a, b=b)


def build_default_family(T: int) -> IntervalFamily:
    """The standard week-grid family: lengths 7/14/21/28 on start days 1+7(j-1), 4+7(j-1)."""
    if T < min(DEFAULT_LENGTHS):
        raise ConfigError(f"no admissible interval: need T >= {min(DEFAULT_LENGTHS)}, got {T}")
    lengths = [d for d in DEFAULT_LENGTHS if d <= T]
    return build_custom_family(T, lengths)


def minimal_intervals(rejected: Iterable[Interval]) -> set[Interval]:
    """Windows in `rejected` containing no other rejected window as a proper subset.

    These are the most localized pieces of evidence; every other rejected
    window contains at least one of them.
    """
    pool = set(rejected)
    return {
        cand
        for cand in pool
        if not any(cand.contains(other, proper=True) for other in pool)
    }


def interval_sums(values: np.ndarray, family: IntervalFamily) -> np.ndarray:
    """Sum of `values` over the member days of every window in the family.

    Accepts shape (T,) or (..., T) and returns (..., K).  Prefix sums make
    each window an O(1) lookup after one O(T) pass.
    """
    x = np.asarray(values, dtype=float)
    if x.shape[-1] != family.T:
        raise ValueError(f"last axis has length {x.shape[-1]}, family expects T={family.T}")
    cs = np.zeros(x.shape[:-1] + (family.T + 1,))
    np.cumsum(x, axis=-1, out=cs[..., 1:])
    lo, hi = family._bounds
    return cs[..., hi] - cs[..., lo]
