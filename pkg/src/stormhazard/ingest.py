"""Parsing and validation of the 3-hourly ap series and the solar-cycle table.

File layouts
------------
ap series::

    timestamp,ap
    1933-09-01T00:00:00Z,7
    1933-09-01T03:00:00Z,4

cycle table::

    cycle,start,end,ssn_max
    17,1933-09-01,1944-02-01,119.2
"""
from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

__all__ = [
    "LEGAL_AP_VALUES",
    "STEP_SECONDS",
    "SECONDS_PER_YEAR",
    "IngestError",
    "ApSeries",
    "CycleRecord",
    "Dataset",
    "parse_ap_series",
    "parse_cycles",
    "center_covariates",
    "write_ap_series",
    "load_dataset",
    "historical_cycles_path",
]

LEGAL_AP_VALUES: frozenset[int] = frozenset(
    (0, 2, 3, 4, 5, 6, 7, 9, 12, 15, 18, 22, 27, 32, 39, 48, 56, 67, 80, 94,
     111, 132, 154, 179, 207, 236, 300, 400)
)
STEP_SECONDS = 3 * 3600
# Julian year; durations and rates are expressed in these units throughout.
SECONDS_PER_YEAR = 365.25 * 86400.0
OBS_PER_YEAR = 2920

_EPOCH = np.datetime64("1970-01-01T00:00:00", "s")


class IngestError(ValueError):
    """Input file violates the documented layout or the series invariants."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


def _diag(kind: str, message: str, path, line, stream: TextIO | None) -> str:
    text = f"{kind}: {path}:{line}: {message}"
    print(text, file=stream if stream is not None else sys.stderr)
    return text


def _to_datetime64(values: Iterable) -> np.ndarray:
    return np.asarray(list(values), dtype="datetime64[s]")


def _parse_instant(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def _parse_date(text: str) -> np.datetime64:
    text = text.strip()
    if "T" in text:
        return _parse_instant(text)
    return np.datetime64(date.fromisoformat(text), "s")


def format_instant(t: np.datetime64) -> str:
    return str(np.datetime64(t, "s")) + "Z"


@dataclass(frozen=True, eq=False)
class ApSeries:
    """Gap-free series on a 3-hour grid.

    ``times`` is ``datetime64[s]``; ``values`` is ``int64``. The legal-value
    check is a parsing concern (derived series such as gradients are signed),
    the constructor only enforces the grid.
    """

    times: np.ndarray
    values: np.ndarray
    kind: str = "ap"

    def __post_init__(self):
        times = np.asarray(self.times, dtype="datetime64[s]")
        values = np.asarray(self.values, dtype=np.int64)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if len(times) > 1:
            steps = np.diff(times).astype(np.int64)
            bad = np.flatnonzero(steps != STEP_SECONDS)
            if bad.size:
                i = int(bad[0]) + 1
                raise ValueError(
                    f"series is not on a gap-free 3-hour grid at observation {i} ({times[i]})"
                )
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ApSeries):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    @property
    def start(self) -> np.datetime64:
        return self.times[0]

    @property
    def end(self) -> np.datetime64:
        """End of the last 3-hour interval (exclusive)."""
        return self.times[-1] + np.timedelta64(STEP_SECONDS, "s")


@dataclass(frozen=True)
class CycleRecord:
    index: int
    start: np.datetime64
    end: np.datetime64
    ssn_max: float
    covariate: float = 0.0

    @property
    def duration_years(self) -> float:
        return float((self.end - self.start).astype(np.int64)) / SECONDS_PER_YEAR

    def contains(self, t: np.datetime64) -> bool:
        """Half-open membership, so adjacent cycles never share a storm."""
        return bool(self.start <= t < self.end)


@dataclass(frozen=True)
class Dataset:
    series: ApSeries
    cycles: tuple[CycleRecord, ...]
    centering_constant: float

    @property
    def cycle_years(self) -> float:
        return sum(c.duration_years for c in self.cycles)

    def observations_in_cycles(self) -> int:
        t = self.series.times
        return int(sum(np.count_nonzero((t >= c.start) & (t < c.end)) for c in self.cycles))


def _read_rows(path: Path, header: Sequence[str]):
    try:
        handle = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot open file: {exc.strerror}", path) from exc
    with handle:
        reader = csv.reader(handle)
        try:
            first = next(reader)
        except StopIteration:
            raise IngestError("empty file", path, 1) from None
        if [h.strip() for h in first] != list(header):
            raise IngestError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", path, 1)
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                raise IngestError("blank row", path, reader.line_num)
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            yield reader.line_num, row


def parse_ap_series(
    path: str | Path,
    mode: str = "strict",
    *,
    stderr: TextIO | None = None,
) -> ApSeries:
    """Read an ap CSV file.

    In ``strict`` mode a value outside :data:`LEGAL_AP_VALUES` is an error;
    in ``lenient`` mode it is reported as a ``WARN:`` line and kept.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', not {mode!r}")
    path = Path(path)
    times: list[np.datetime64] = []
    values: list[int] = []
    for lineno, (ts, ap) in _read_rows(path, ("timestamp", "ap")):
        try:
            t = _parse_instant(ts)
        except ValueError:
            raise IngestError(f"malformed timestamp {ts!r}", path, lineno) from None
        try:
            v = int(ap.strip(), 10)
        except ValueError:
            raise IngestError(f"malformed ap value {ap!r}", path, lineno) from None
        if v < 0:
            raise IngestError(f"negative ap value {v}", path, lineno)
        if v not in LEGAL_AP_VALUES:
            if mode == "strict":
                raise IngestError(f"ap value {v} is not in the legal ap set", path, lineno)
            _diag("WARN", f"ap value {v} is not in the legal ap set (kept)", path, lineno, stderr)
        if times:
            step = int((t - times[-1]).astype(np.int64))
            if step <= 0:
                raise IngestError("timestamps are not strictly increasing", path, lineno)
            if step != STEP_SECONDS:
                raise IngestError(
                    f"gap or misaligned step of {step} s (expected {STEP_SECONDS} s)", path, lineno
                )
        elif int((t - _EPOCH).astype(np.int64)) % STEP_SECONDS:
            raise IngestError("first timestamp is not aligned to the 3-hour grid", path, lineno)
        times.append(t)
        values.append(v)
    if not values:
        raise IngestError("no observations", path)
    return ApSeries(_to_datetime64(times), np.asarray(values, dtype=np.int64))


def write_ap_series(series: ApSeries, path: str | Path | TextIO) -> None:
    if hasattr(path, "write"):
        _write_ap(series, path)
        return
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        _write_ap(series, handle)


def _write_ap(series: ApSeries, handle: TextIO) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(["timestamp", "ap"])
    for t, v in zip(series.times, series.values):
        writer.writerow([format_instant(t), int(v)])


def parse_cycles(path: str | Path, series: ApSeries | None = None) -> list[CycleRecord]:
    """Read the cycle table. Covariates are left uncentred (zero).

    When ``series`` is given, every cycle must lie inside its span.
    """
    path = Path(path)
    cycles: list[CycleRecord] = []
    for lineno, (idx, start, end, ssn) in _read_rows(path, ("cycle", "start", "end", "ssn_max")):
        try:
            index = int(idx.strip())
            t0, t1 = _parse_date(start), _parse_date(end)
            ssn_max = float(ssn)
        except ValueError as exc:
            raise IngestError(f"malformed row: {exc}", path, lineno) from None
        if index <= 0:
            raise IngestError(f"cycle number must be positive, got {index}", path, lineno)
        if not np.isfinite(ssn_max) or ssn_max <= 0:
            raise IngestError(f"ssn_max must be positive, got {ssn}", path, lineno)
        if t1 <= t0:
            raise IngestError(f"cycle {index} has non-positive duration ({start} .. {end})", path, lineno)
        if cycles and t0 < cycles[-1].end:
            raise IngestError(f"cycle {index} overlaps or precedes cycle {cycles[-1].index}", path, lineno)
        if series is not None and (t0 < series.start or t1 > series.end):
            raise IngestError(
                f"cycle {index} ({start} .. {end}) lies outside the series span "
                f"{format_instant(series.start)} .. {format_instant(series.end)}",
                path,
                lineno,
            )
        cycles.append(CycleRecord(index, t0, t1, ssn_max))
    if not cycles:
        raise IngestError("no cycles", path)
    return cycles


def center_covariates(cycles: Sequence[CycleRecord]) -> tuple[list[CycleRecord], float]:
    if not cycles:
        raise ValueError("at least one cycle is required")
    ssn = np.array([c.ssn_max for c in cycles], dtype=float)
    center = float(ssn.mean())
    return [replace(c, covariate=float(s - center)) for c, s in zip(cycles, ssn)], center


def apply_centering(cycles: Sequence[CycleRecord], center: float) -> list[CycleRecord]:
    """Centre against a fixed constant (e.g. the historical mean for a new cycle)."""
    return [replace(c, covariate=float(c.ssn_max - center)) for c in cycles]


def load_dataset(
    ap_path: str | Path,
    cycles_path: str | Path,
    mode: str = "strict",
    *,
    stderr: TextIO | None = None,
) -> Dataset:
    series = parse_ap_series(ap_path, mode, stderr=stderr)
    cycles, center = center_covariates(parse_cycles(cycles_path, series))
    return Dataset(series, tuple(cycles), center)


def historical_cycles_path() -> Path:
    """Bundled table for solar cycles 17-23 (Sep 1933 - Dec 2008)."""
    return Path(__file__).parent / "data" / "cycles_17_23.csv"
