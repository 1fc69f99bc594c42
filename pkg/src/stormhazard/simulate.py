"""Synthetic catalogs and series from known model parameters.

Random numbers come from numpy's PCG64 bit generator. A run seeded with
``seed`` uses ``SeedSequence(seed)``; replicate ``i`` of a batch uses
``SeedSequence(seed, spawn_key=(i,))`` (see :func:`replicate_rng`), so any
replicate can be regenerated on its own.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .decluster import Storm
from .hazard import WarpedStorm, unwarp
from .ingest import SECONDS_PER_YEAR, STEP_SECONDS, ApSeries, CycleRecord

__all__ = [
    "SimSpec",
    "ClusterProfile",
    "SimulatedSeries",
    "make_rng",
    "replicate_rng",
    "synthetic_cycles",
    "simulate_events",
    "simulate_counts",
    "paint_series",
    "simulate_series",
    "historical_like_lambda0",
]

Lambda0 = Union[Callable[[np.ndarray], np.ndarray], tuple]
_SIM_EPOCH = np.datetime64("1900-01-01T00:00:00", "s")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))))


def historical_like_lambda0(alpha: float = 9.3, contrast: float = 0.6) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth base intensity with total mass ``alpha`` peaking in the second half.

    ``alpha * (1 + contrast * sin(2 pi t))`` is zero-mean-modulated, so its
    integral over the period is exactly ``alpha``.
    """
    if not 0 <= contrast < 1:
        raise ValueError("contrast must lie in [0, 1)")

    def lam(t):
        return alpha * (1.0 + contrast * np.sin(2.0 * np.pi * np.asarray(t, dtype=float)))

    lam.sup = alpha * (1.0 + contrast)
    return lam


def synthetic_cycles(design: Sequence[tuple[float, float]], start=_SIM_EPOCH) -> list[CycleRecord]:
    """Back-to-back calendar cycles for ``(D_j, X_j)`` pairs, starting at midnight."""
    cycles = []
    t = np.datetime64(start, "s")
    for k, (d, x) in enumerate(design, start=1):
        if d <= 0:
            raise ValueError("cycle durations must be positive")
        seconds = int(round(d * SECONDS_PER_YEAR / STEP_SECONDS)) * STEP_SECONDS
        end = t + np.timedelta64(seconds, "s")
        cycles.append(CycleRecord(k, t, end, ssn_max=float("nan"), covariate=float(x)))
        t = end
    return cycles


@dataclass(frozen=True)
class SimSpec:
    lambda0: Lambda0
    cycles: Sequence[CycleRecord] | Sequence[tuple[float, float]]
    beta: float
    seed: int = 0
    emit: str = "events"
    strength_probs: dict = field(default_factory=lambda: {111: 1.0})
    lambda_max: float | None = None

    def __post_init__(self):
        if self.emit not in ("events", "series"):
            raise ValueError("emit must be 'events' or 'series'")
        probs = np.array(list(self.strength_probs.values()), dtype=float)
        if probs.size == 0 or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ValueError("strength_probs must be a probability vector")

    def calendar_cycles(self) -> list[CycleRecord]:
        if self.cycles and isinstance(self.cycles[0], CycleRecord):
            return list(self.cycles)
        return synthetic_cycles(self.cycles)


def _tabulated(lambda0: Lambda0):
    """Callable and supremum for either a callable or a ``(grid, values)`` table."""
    if callable(lambda0):
        sup = getattr(lambda0, "sup", None)
        if sup is None:
            probe = np.asarray(lambda0(np.linspace(-0.5, 0.5, 8193)), dtype=float)
            sup = float(probe.max()) * (1.0 + 1e-3)
        return lambda0, float(sup)
    grid, values = (np.asarray(a, dtype=float) for a in lambda0)
    if grid.ndim != 1 or grid.shape != values.shape:
        raise ValueError("tabulated lambda0 needs aligned 1-d grid and values")
    if np.any(values < 0):
        raise ValueError("lambda0 must be nonnegative")
    return (lambda t: np.interp(t, grid, values)), float(values.max())


def _thin(lam, sup: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Lewis-Shedler thinning on [-0.5, 0.5] for intensity ``scale * lam``."""
    bound = sup * scale
    if bound <= 0:
        return np.empty(0)
    n = rng.poisson(bound)
    cand = np.sort(rng.uniform(-0.5, 0.5, size=n))
    rate = scale * np.asarray(lam(cand), dtype=float)
    if np.any(rate > bound * (1 + 1e-12)) or np.any(rate < 0):
        raise ValueError("lambda0 exceeds its declared supremum or is negative")
    keep = rng.uniform(0.0, bound, size=n) < rate
    return cand[keep]


def simulate_events(spec: SimSpec, rng: np.random.Generator | None = None) -> list[list[WarpedStorm]]:
    """Per-cycle warped events of the proportional-hazard process."""
    rng = make_rng(spec.seed) if rng is None else rng
    lam, sup = _tabulated(spec.lambda0)
    if spec.lambda_max is not None:
        sup = float(spec.lambda_max)
    levels = np.array(list(spec.strength_probs.keys()), dtype=np.int64)
    probs = np.array(list(spec.strength_probs.values()), dtype=float)
    probs = probs / probs.sum()
    out = []
    for c in spec.calendar_cycles():
        d = c.duration_years
        times = _thin(lam, sup, d * np.exp(spec.beta * c.covariate), rng)
        strengths = levels[rng.choice(levels.size, size=times.size, p=probs)] if times.size else []
        seconds = float((c.end - c.start).astype(np.int64))
        dates = unwarp(times, c.start, seconds)
        out.append([
            WarpedStorm(Storm(c.index, int(s), date, 1, 1), float(t))
            for t, s, date in zip(times, strengths, dates)
        ])
    return out


def simulate_counts(spec: SimSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-cycle totals only (no placement), drawn from the same law."""
    rng = make_rng(spec.seed) if rng is None else rng
    lam, _ = _tabulated(spec.lambda0)
    grid = np.linspace(-0.5, 0.5, 4097)
    vals = np.asarray(lam(grid), dtype=float)
    alpha = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid)))
    cycles = spec.calendar_cycles()
    mean = np.array([alpha * c.duration_years * np.exp(spec.beta * c.covariate) for c in cycles])
    return rng.poisson(mean)


@dataclass(frozen=True)
class ClusterProfile:
    """Shape painted around each planted storm.

    ``hold`` steps at the storm strength (``hold_extreme`` for storms at or
    above ``extreme_level``), optionally flanked by one ``shoulder`` step on
    each side when the shoulder is below the strength; everything else is
    ``background``.
    """

    background: int = 27
    shoulder: int | None = 111
    hold: int = 1
    hold_extreme: int = 2
    extreme_level: int = 400

    def shape(self, strength: int) -> tuple[list[int], int]:
        hold = self.hold_extreme if strength >= self.extreme_level else self.hold
        core = [strength] * hold
        if self.shoulder is not None and self.shoulder < strength:
            return [self.shoulder, *core, self.shoulder], 1
        return core, 0


class SimulatedSeries(NamedTuple):
    series: ApSeries
    storms: list[Storm]
    cycles: list[CycleRecord]


def paint_series(
    cycles: Sequence[CycleRecord],
    planted: Sequence[tuple[np.datetime64, int]],
    profile: ClusterProfile = ClusterProfile(),
    run_length: int | None = None,
    low_level: int | None = None,
) -> SimulatedSeries:
    """Write clusters for ``(date, strength)`` pairs onto a 3-hourly grid spanning ``cycles``.

    With ``run_length`` set, planted clusters closer than ``run_length``
    below-threshold steps raise ``ValueError`` (they would merge).
    """
    t0 = np.datetime64(cycles[0].start, "s")
    n_obs = int((cycles[-1].end - t0).astype(np.int64)) // STEP_SECONDS
    values = np.full(n_obs, profile.background, dtype=np.int64)
    times = t0 + (np.arange(n_obs, dtype=np.int64) * STEP_SECONDS).astype("timedelta64[s]")
    low = low_level if low_level is not None else (
        profile.shoulder if profile.shoulder is not None else min(s for _, s in planted) if planted else 0
    )
    if profile.background >= low and planted:
        raise ValueError("background must lie below the low level")
    storms: list[Storm] = []
    prev_last = None
    by_start = sorted(planted, key=lambda p: p[0])
    for date, strength in by_start:
        i = int((np.datetime64(date, "s") - t0).astype(np.int64)) // STEP_SECONDS
        shape, lead = profile.shape(int(strength))
        first = i - lead
        last = first + len(shape) - 1
        if first < 0 or last >= n_obs:
            raise ValueError(f"planted storm at {date} does not fit inside the series")
        if prev_last is not None:
            gap = first - prev_last - 1
            if gap < 0 or (run_length is not None and gap < run_length):
                raise ValueError(f"planted storms overlap or lie closer than r near {date}")
        values[first:last + 1] = shape
        peak_at = times[i]
        cycle = next((c.index for c in cycles if c.contains(peak_at)), None)
        if cycle is None:
            raise ValueError(f"planted storm at {date} lies outside every cycle")
        hold = shape.count(int(strength))
        n_exceed = sum(1 for v in shape if v >= low)
        storms.append(Storm(cycle, int(strength), peak_at, n_exceed, hold))
        prev_last = last
    return SimulatedSeries(ApSeries(times, values), storms, list(cycles))


def simulate_series(
    spec: SimSpec,
    cluster_profile: ClusterProfile = ClusterProfile(),
    run_length: int = 8,
    rng: np.random.Generator | None = None,
    on_conflict: str = "raise",
) -> SimulatedSeries:
    """Simulate events and paint them as declusterable clusters.

    ``storms`` in the result is what :func:`decluster.decluster` must return
    on ``series`` with ``low_level = cluster_profile.shoulder`` (or the
    lowest planted strength) and the same ``run_length``.

    Events closer than ``run_length`` steps would merge, and an event at a
    series edge may not fit its cluster. ``on_conflict='raise'`` rejects
    both with ``ValueError``; ``'drop'`` keeps the earlier event and discards
    the offending one (``result.storms`` then lists only what was painted).
    """
    if on_conflict not in ("raise", "drop"):
        raise ValueError("on_conflict must be 'raise' or 'drop'")
    cycles = spec.calendar_cycles()
    events = [e for per_cycle in simulate_events(spec, rng) for e in per_cycle]
    t0 = cycles[0].start
    n_obs = int((cycles[-1].end - t0).astype(np.int64)) // STEP_SECONDS
    planted = []
    prev_last = None
    for e in events:
        c = next(c for c in cycles if c.index == e.storm.cycle_index)
        i = int((e.storm.date - t0).astype(np.int64)) // STEP_SECONDS
        # snapping down may cross into the previous cycle
        i = max(i, int((c.start - t0).astype(np.int64)) // STEP_SECONDS)
        shape, lead = cluster_profile.shape(e.storm.strength)
        first, last = i - lead, i - lead + len(shape) - 1
        bad = first < 0 or last >= n_obs or (prev_last is not None and first - prev_last - 1 < run_length)
        if bad:
            if on_conflict == "raise":
                raise ValueError(f"simulated storm near {e.storm.date} overlaps a neighbour or the series edge")
            continue
        planted.append((t0 + np.timedelta64(i * STEP_SECONDS, "s"), e.storm.strength))
        prev_last = last
    return paint_series(cycles, planted, cluster_profile, run_length)
