"""Monte Carlo quantiles of the Gaussian maximum statistics.

The null quantile of the calibrated maximum statistic is unknown, so it is
approximated by simulation: draw i.i.d. standard normal panels, recompute the
maximum statistic on each, and take empirical quantiles of the draws.  One
shared panel per draw feeds every pair, which preserves the correlation
between statistics of pairs that share a unit.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .intervals import IntervalFamily, interval_sums, scale_constants
from .stats import PairSet

CACHE_FORMAT_VERSION = 1
DEFAULT_DRAWS = 5000
_CHUNK = 256


def gaussian_statistics(
    panels: np.ndarray, pairs: PairSet, family: IntervalFamily
) -> np.ndarray:
    """Signed Gaussian pair statistics phi for one panel or a batch of panels.

    `panels` has shape (n_units, T) or (B, n_units, T), units in the order of
    pairs.countries; the result has shape (|pairs|, K) or (B, |pairs|, K).
    Each entry is the window sum of (Z_i - Z_j) scaled by 1/sqrt(2 * length),
    so it is standard normal marginally.
    """
    z = np.asarray(panels, dtype=float)
    squeeze = z.ndim == 2
    if squeeze:
        z = z[None]
    if z.shape[1] != len(pairs.countries):
        raise ConfigError(
            f"panel has {z.shape[1]} units, pair set needs {len(pairs.countries)}"
        )
    sums = interval_sums(z, family)
    i_pos, j_pos = pairs.positions
    phi = (sums[:, i_pos, :] - sums[:, j_pos, :]) / np.sqrt(2.0 * family.day_lengths)
    return phi[0] if squeeze else phi


def _maxima(panels: np.ndarray, pairs: PairSet, family: IntervalFamily):
    phi_abs = np.abs(gaussian_statistics(panels, pairs, family))
    scale = (family.a * (phi_abs - family.b)).max(axis=(1, 2))
    plain = phi_abs.max(axis=(1, 2))
    return scale, plain


def draw_gaussian_max(
    T: int, pairs: PairSet, family: IntervalFamily, rng: np.random.Generator
) -> tuple[float, float]:
    """One Monte Carlo draw of the two maximum statistics.

    Returns (scale-calibrated maximum, plain maximum of |phi|).  The same
    normal panel enters every pair, which is essential: drawing fresh normals
    per pair would destroy the joint law being calibrated.
    """
    if family.T != T:
        raise ConfigError(f"family built for T={family.T}, requested T={T}")
    z = rng.standard_normal((len(pairs.countries), T))
    scale, plain = _maxima(z[None], pairs, family)
    return float(scale[0]), float(plain[0])


def empirical_quantile(sorted_values: np.ndarray, alpha: float) -> float:
    """(1 - alpha) empirical quantile: ascending order statistic at rank ceil(N(1-alpha)).

    The rank is computed in exact rational arithmetic so float representation
    of alpha can never shift it by one.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    n = len(sorted_values)
    rank = math.ceil(n * (1 - Fraction(alpha)))
    return float(sorted_values[rank - 1])


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """Sorted Monte Carlo draws plus precomputed quantiles for a fixed geometry."""

    T: int
    n_units: int
    pair_fingerprint: str
    family_fingerprint: str
    n_draws: int
    seed: int
    scale_draws: np.ndarray
    uniform_draws: np.ndarray
    q_scale: dict[float, float]
    q_uniform: dict[float, float]
    scales: tuple[float, ...]

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(sorted(self.q_scale))

    def with_alphas(self, alphas: Sequence[float]) -> "QuantileTable":
        """Same draws, quantile maps recomputed for the given levels."""
        q_scale = {float(a): empirical_quantile(self.scale_draws, a) for a in alphas}
        q_uniform = {float(a): empirical_quantile(self.uniform_draws, a) for a in alphas}
        return replace(self, q_scale=q_scale, q_uniform=q_uniform)


def build_quantile_table(
    T: int,
    pairs: PairSet,
    family: IntervalFamily,
    alphas: Sequence[float],
    n_draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    workers: int = 1,
) -> QuantileTable:
    """Simulate n_draws maxima and assemble the quantile table.

    Each draw uses its own RNG substream spawned from the seed, and results
    are written back by draw index, so the table is bit-identical for any
    worker count or scheduling order.
    """
    if n_draws < 100:
        raise ConfigError(f"need at least 100 draws for stable quantiles, got {n_draws}")
    if family.T != T:
        raise ConfigError(f"family built for T={family.T}, requested T={T}")
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {a}")
    n_units = len(pairs.countries)
    children = np.random.SeedSequence(seed).spawn(n_draws)
    scale = np.empty(n_draws)
    plain = np.empty(n_draws)

    def run_chunk(lo: int, hi: int):
        panels = np.empty((hi - lo, n_units, T))
        for off, child in enumerate(children[lo:hi]):
            panels[off] = np.random.default_rng(child).standard_normal((n_units, T))
        s, p = _maxima(panels, pairs, family)
        return lo, hi, s, p

    bounds = [(lo, min(lo + _CHUNK, n_draws)) for lo in range(0, n_draws, _CHUNK)]
    if workers <= 1:
        results = [run_chunk(lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: run_chunk(*b), bounds))
    for lo, hi, s, p in results:
        scale[lo:hi] = s
        plain[lo:hi] = p
    scale.sort()
    plain.sort()
    table = QuantileTable(
        T=T,
        n_units=n_units,
        pair_fingerprint=pairs.fingerprint(),
        family_fingerprint=family.fingerprint(),
        n_draws=n_draws,
        seed=int(seed),
        scale_draws=scale,
        uniform_draws=plain,
        q_scale={},
        q_uniform={},
        scales=family.scales,
    )
    return table.with_alphas(alphas)


def critical_value(
    table: QuantileTable, alpha: float, h: float, mode: str = "scale"
) -> float:
    """Rejection threshold for a window of rescaled length h.

    Scale mode returns b(h) + q(alpha) / a(h); uniform mode ignores h and
    returns the plain-maximum quantile.  Only levels precomputed in the table
    are served; there is no interpolation between levels.
    """
    if mode not in ("scale", "uniform"):
        raise ConfigError(f"mode must be 'scale' or 'uniform', got {mode!r}")
    if alpha not in table.q_scale:
        raise ConfigError(f"alpha={alpha} not precomputed in the quantile table")
    if mode == "uniform":
        return table.q_uniform[alpha]
    if h not in table.scales:
        raise ConfigError(f"h={h} does not match any family scale {table.scales}")
    a, b = scale_constants(h)
    return b + table.q_scale[alpha] / a


def cache_path(
    cache_dir: str | Path,
    T: int,
    pairs: PairSet,
    family: IntervalFamily,
    n_draws: int,
    seed: int,
) -> Path:
    key = f"{T}-{pairs.fingerprint()[:16]}-{family.fingerprint()[:16]}-{n_draws}-{seed}"
    return Path(cache_dir) / f"quantiles-{key}.json"


def save_table(table: QuantileTable, path: str | Path) -> None:
    payload = {
        "format_version": CACHE_FORMAT_VERSION,
        "T": table.T,
        "n_units": table.n_units,
        "pair_fingerprint": table.pair_fingerprint,
        "family_fingerprint": table.family_fingerprint,
        "n_draws": table.n_draws,
        "seed": table.seed,
        "scales": list(table.scales),
        "scale_draws": table.scale_draws.tolist(),
        "uniform_draws": table.uniform_draws.tolist(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_table(path: str | Path) -> QuantileTable:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CACHE_FORMAT_VERSION:
        raise ConfigError(f"unsupported cache format in {path}")
    return QuantileTable(
        T=payload["T"],
        n_units=payload["n_units"],
        pair_fingerprint=payload["pair_fingerprint"],
        family_fingerprint=payload["family_fingerprint"],
        n_draws=payload["n_draws"],
        seed=payload["seed"],
        scale_draws=np.array(payload["scale_draws"]),
        uniform_draws=np.array(payload["uniform_draws"]),
        q_scale={},
        q_uniform={},
        scales=tuple(payload["scales"]),
    )


def load_or_build(
    cache_dir: str | Path | None,
    T: int,
    pairs: PairSet,
    family: IntervalFamily,
    alphas: Sequence[float],
    n_draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    workers: int = 1,
) -> QuantileTable:
    """Serve the table from the cache when geometry and seed match exactly."""
    path = None
    if cache_dir is not None:
        path = cache_path(cache_dir, T, pairs, family, n_draws, seed)
        if path.exists():
            table = load_table(path)
            if (
                table.T == T
                and table.pair_fingerprint == pairs.fingerprint()
                and table.family_fingerprint == family.fingerprint()
                and table.n_draws == n_draws
                and table.seed == int(seed)
            ):
                return table.with_alphas(alphas)
    table = build_quantile_table(T, pairs, family, alphas, n_draws, seed, workers)
    if path is not None:
        save_table(table, path)
    return table
