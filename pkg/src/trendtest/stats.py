"""Per-series and per-pair statistics for the window comparison test.

The normalized pair statistic for series i, j on window I is

    psi = sum_{t in I} (x_i[t] - x_j[t]) / (sigma_hat * sqrt(sum_{t in I} (x_i[t] + x_j[t])))

where sigma_hat is the square root of the pooled overdispersion estimate.
Under equal trends psi has approximately zero mean and unit variance, and it
is invariant under rescaling all series by a common positive factor.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, IngestionError, NumericError
from .intervals import Interval, IntervalFamily, interval_sums


@dataclass(frozen=True, eq=False)
class CountSeries:
    """One unit's aligned daily counts (stored as non-negative reals)."""

    id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise IngestionError(f"series {self.id!r}: values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise IngestionError(f"series {self.id!r}: non-finite values")
        if v.size and v.min() < 0:
            raise IngestionError(f"series {self.id!r}: negative values")
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class PairSet:
    """Ordered collection of (i, j) series-index pairs with i < j (0-based)."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        normalized = tuple((int(i), int(j)) for i, j in self.pairs)
        if not normalized:
            raise ConfigError("empty pair set")
        seen: set[tuple[int, int]] = set()
        for i, j in normalized:
            if not 0 <= i < j:
                raise ConfigError(f"pair ({i}, {j}) must satisfy 0 <= i < j")
            if (i, j) in seen:
                raise ConfigError(f"duplicate pair ({i}, {j})")
            seen.add((i, j))
        object.__setattr__(self, "pairs", normalized)

    @classmethod
    def all_pairs(cls, n: int) -> "PairSet":
        if n < 2:
            raise ConfigError(f"need at least two series for pairs, got {n}")
        return cls(tuple((i, j) for i in range(n) for j in range(i + 1, n)))

    def __len__(self) -> int:
        return len(self.pairs)

    @cached_property
    def countries(self) -> tuple[int, ...]:
        """Sorted indices of every series appearing in some pair."""
        return tuple(sorted({k for pair in self.pairs for k in pair}))

    @cached_property
    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Pair indices re-expressed as positions within `countries`."""
        where = {c: pos for pos, c in enumerate(self.countries)}
        i_pos = np.array([where[i] for i, _ in self.pairs])
        j_pos = np.array([where[j] for _, j in self.pairs])
        return i_pos, j_pos

    def fingerprint(self) -> str:
        text = ";".join(f"{i},{j}" for i, j in self.pairs)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class OverdispersionEstimate:
    """Pooled squared overdispersion plus the per-series components."""

    sigma_hat_sq: float
    per_series: Mapping[str, float]

    @property
    def sigma_hat(self) -> float:
        return math.sqrt(self.sigma_hat_sq)


def overdispersion_single(series: CountSeries) -> float:
    """Squared overdispersion of one series from its first differences.

    sum of squared day-to-day differences over twice the total count; a
    constant series gives 0, a Poisson-like series roughly 1.
    """
    x = series.values
    if x.size < 2:
        raise NumericError(f"series {series.id!r}: need at least two observations")
    total = float(x.sum())
    if total <= 0.0:
        raise NumericError("all-zero series: overdispersion undefined")
    d = np.diff(x)
    return float(d @ d) / (2.0 * total)


def overdispersion_pooled(
    data: Sequence[CountSeries], pairs: PairSet
) -> OverdispersionEstimate:
    """Mean of the per-series estimates over exactly the units used in `pairs`."""
    per: dict[str, float] = {}
    for idx in pairs.countries:
        if idx >= len(data):
            raise ConfigError(f"pair index {idx} out of range for {len(data)} series")
        series = data[idx]
        try:
            per[series.id] = overdispersion_single(series)
        except NumericError as exc:
            raise NumericError(f"series {series.id!r}: {exc}") from None
    pooled = sum(per.values()) / len(per)
    return OverdispersionEstimate(sigma_hat_sq=pooled, per_series=per)


def pair_statistic(
    x_i: CountSeries, x_j: CountSeries, ival: Interval, sigma_hat: float
) -> float:
    """Normalized difference-of-sums statistic for one pair on one window.

    Returns 0 when the window contains no counts at all (a degenerate window
    carries no evidence either way; callers track the flag separately).
    """
    if sigma_hat <= 0:
        raise NumericError(f"sigma_hat must be positive, got {sigma_hat}")
    if x_i.T != x_j.T:
        raise IngestionError(f"series lengths differ: {x_i.T} vs {x_j.T}")
    if ival.start_day < 1 or ival.end_day > x_i.T:
        raise ConfigError(f"window {ival} does not fit a series of length {x_i.T}")
    sl = slice(ival.start_day - 1, ival.end_day)
    si = float(x_i.values[sl].sum())
    sj = float(x_j.values[sl].sum())
    total = si + sj
    if total <= 0.0:
        return 0.0
    return (si - sj) / (sigma_hat * math.sqrt(total))


def statistics_with_flags(
    data: Sequence[CountSeries],
    pairs: PairSet,
    family: IntervalFamily,
    sigma_hat: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Statistic matrix for every (pair, window) plus the degenerate-window mask.

    Rows follow the pair order, columns the family order.  Windows whose
    total count is zero get statistic 0 and a True flag.
    """
    if sigma_hat <= 0:
        raise NumericError(f"sigma_hat must be positive, got {sigma_hat}")
    T = data[0].T
    for s in data:
        if s.T != T:
            raise IngestionError(
                f"series lengths differ: {s.id!r} has {s.T}, expected {T}"
            )
    if family.T != T:
        raise ConfigError(f"family built for T={family.T}, data has T={T}")
    if pairs.countries[-1] >= len(data):
        raise ConfigError(
            f"pair index {pairs.countries[-1]} out of range for {len(data)} series"
        )
    panel = np.stack([data[idx].values for idx in pairs.countries])
    sums = interval_sums(panel, family)
    i_pos, j_pos = pairs.positions
    num = sums[i_pos] - sums[j_pos]
    total = sums[i_pos] + sums[j_pos]
    degenerate = total <= 0.0
    denom = sigma_hat * np.sqrt(np.where(degenerate, 1.0, total))
    psi = np.where(degenerate, 0.0, num / denom)
    return psi, degenerate


def all_statistics(
    data: Sequence[CountSeries],
    pairs: PairSet,
    family: IntervalFamily,
    sigma_hat: float,
) -> np.ndarray:
    """Dense |pairs| x K statistic matrix (see statistics_with_flags)."""
    return statistics_with_flags(data, pairs, family, sigma_hat)[0]


def smooth_trend(series: CountSeries, bandwidth_days: int) -> np.ndarray:
    """Rectangular-kernel local average with window [t - b, t + b] clipped to the sample.

    Plotting-grade trend estimate; near the boundary the window shrinks and
    the average renormalizes over the days actually present.
    """
    if bandwidth_days < 1:
        raise ConfigError(f"bandwidth must be at least 1 day, got {bandwidth_days}")
    x = series.values
    T = x.size
    cs = np.zeros(T + 1)
    np.cumsum(x, out=cs[1:])
    t = np.arange(T)
    lo = np.maximum(t - bandwidth_days, 0)
    hi = np.minimum(t + bandwidth_days, T - 1)
    return (cs[hi + 1] - cs[lo]) / (hi - lo + 1)
