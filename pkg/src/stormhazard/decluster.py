"""Runs declustering of threshold exceedances into a storm catalog."""
from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .ingest import LEGAL_AP_VALUES, ApSeries, CycleRecord, _parse_instant, format_instant

__all__ = [
    "DeclusterConfig",
    "Storm",
    "decluster",
    "gradient_series",
    "max_multiplicity_stats",
    "write_catalog",
    "read_catalog",
    "DEFAULT_RUN_LENGTH",
]

DEFAULT_RUN_LENGTH = 8  # 24 hours of 3-hourly observations
CATALOG_HEADER = ("cycle", "strength", "date", "length", "max_multiplicity")


@dataclass(frozen=True)
class DeclusterConfig:
    low_level: int
    run_length: int = DEFAULT_RUN_LENGTH
    strength_kind: str = "level"

    def __post_init__(self):
        if self.strength_kind not in ("level", "gradient"):
            raise ValueError(f"strength_kind must be 'level' or 'gradient', not {self.strength_kind!r}")
        if self.low_level <= 0:
            raise ValueError(f"low_level must be positive, got {self.low_level}")
        if self.strength_kind == "level" and self.low_level not in LEGAL_AP_VALUES:
            raise ValueError(f"low_level {self.low_level} is not a legal ap value")
        if self.run_length < 1:
            raise ValueError(f"run_length must be >= 1, got {self.run_length}")


@dataclass(frozen=True)
class Storm:
    cycle_index: int
    strength: int
    date: np.datetime64
    length: int
    max_multiplicity: int = 1


def _clusters(exceed: np.ndarray, run_length: int) -> list[tuple[int, int]]:
    """(first, last) exceedance indices of each cluster.

    Consecutive exceedances i < j join the same cluster when the number of
    observations strictly between them, ``j - i - 1``, is below ``run_length``.
    """
    idx = np.flatnonzero(exceed)
    if idx.size == 0:
        return []
    gaps = np.diff(idx) - 1
    breaks = np.flatnonzero(gaps >= run_length)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    return [(int(idx[a]), int(idx[b])) for a, b in zip(starts, ends)]


def _assign_cycle(t: np.datetime64, cycles: Sequence[CycleRecord]) -> int | None:
    for c in cycles:
        if c.contains(t):
            return c.index
    return None


def decluster(
    series: ApSeries,
    cycles: Sequence[CycleRecord],
    config: DeclusterConfig,
    *,
    stderr: TextIO | None = None,
) -> list[Storm]:
    """Group exceedances of ``config.low_level`` into storms.

    In gradient mode the clustering runs on :func:`gradient_series` of the
    input. Clustering is done on the whole series before any cycle
    assignment so a cluster straddling a boundary is never split; the storm
    then belongs to the cycle containing its date. Storms dated outside
    every cycle are dropped with a ``WARN:`` line on ``stderr``.
    """
    work = gradient_series(series) if config.strength_kind == "gradient" else series
    values = work.values
    storms: list[Storm] = []
    dropped = 0
    for first, last in _clusters(values >= config.low_level, config.run_length):
        seg = values[first:last + 1]
        peak = int(seg.max())
        at = int(np.argmax(seg))
        mult = 1
        while at + mult < seg.size and seg[at + mult] == peak:
            mult += 1
        date = work.times[first + at]
        cycle = _assign_cycle(date, cycles)
        if cycle is None:
            dropped += 1
            continue
        storms.append(Storm(cycle, peak, date, last - first + 1, mult))
    if dropped:
        print(f"WARN: decluster: {dropped} storm(s) dated outside every cycle were dropped",
              file=stderr if stderr is not None else sys.stderr)
    return storms


def gradient_series(series: ApSeries) -> ApSeries:
    """Signed one-step differences ``ap[i] - ap[i-1]`` stamped at step ``i``."""
    if len(series) < 2:
        raise ValueError("gradient needs at least 2 observations")
    return ApSeries(series.times[1:], np.diff(series.values), kind="gradient")


def max_multiplicity_stats(storms: Sequence[Storm], extreme_level: int) -> tuple[int, int]:
    """(storms reaching ``extreme_level``, those holding their maximum >= 2 steps)."""
    extreme = [s for s in storms if s.strength >= extreme_level]
    return len(extreme), sum(1 for s in extreme if s.max_multiplicity >= 2)


def write_catalog(storms: Sequence[Storm], path: str | Path | TextIO) -> None:
    if hasattr(path, "write"):
        _write_catalog(storms, path)
        return
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        _write_catalog(storms, handle)


def _write_catalog(storms: Sequence[Storm], handle: TextIO) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(CATALOG_HEADER)
    for s in storms:
        writer.writerow([s.cycle_index, s.strength, format_instant(s.date), s.length, s.max_multiplicity])


def read_catalog(path: str | Path) -> list[Storm]:
    path = Path(path)
    storms = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CATALOG_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(CATALOG_HEADER)!r}")
        for row in reader:
            try:
                cycle, strength, date, length, mult = row
                storms.append(Storm(int(cycle), int(strength), _parse_instant(date), int(length), int(mult)))
            except ValueError as exc:
                raise ValueError(f"{path}:{reader.line_num}: malformed catalog row ({exc})") from None
    return storms
