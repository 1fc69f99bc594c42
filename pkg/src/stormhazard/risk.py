"""Extreme-level extrapolation, relative risk, validation and forward prediction."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
from scipy import stats

from .decluster import Storm
from .hazard import HazardFit, P400Estimate, WarpedStorm, unwarp
from .ingest import SECONDS_PER_YEAR
from .kernel import IntensityCurve

__all__ = [
    "RiskCurve",
    "CyclePrediction",
    "ChiSquareResult",
    "FrequencyRow",
    "extrapolate",
    "relative_risk",
    "pearson_chi_square",
    "chi_square_independence",
    "frequency_table",
    "predict_cycle",
]


@dataclass(frozen=True, eq=False)
class RiskCurve:
    base: IntensityCurve
    p400: P400Estimate
    values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    empirical_frequency: float | None = None

    @property
    def grid(self) -> np.ndarray:
        return self.base.grid

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.base.grid, self.values)


def extrapolate(
    base: IntensityCurve,
    p400: P400Estimate,
    cycle_years: float | None = None,
) -> RiskCurve:
    """Extreme-level intensity ``base * p_hat``.

    The band multiplies endpoints: ``base.ci_low * p.ci[0]`` to
    ``base.ci_high * p.ci[1]``. ``empirical_frequency`` is the number of
    extreme storms per covered cycle-year, when ``cycle_years`` is given.
    """
    if base.unit != "per_year":
        raise ValueError("base curve must be in per-year units (see kernel.to_per_year)")
    if not base.corrected:
        print("WARN: extrapolate: base curve has no ongoing-storm correction", file=sys.stderr)
    freq = None if cycle_years is None else p400.k / cycle_years
    return RiskCurve(
        base=base,
        p400=p400,
        values=base.values * p400.p_hat,
        ci_low=base.ci_low * p400.ci[0],
        ci_high=base.ci_high * p400.ci[1],
        empirical_frequency=freq,
    )


def relative_risk(fit: HazardFit, x: float) -> float:
    if not fit.converged:
        raise ValueError("fit did not converge")
    return math.exp(fit.beta_hat * x)


@dataclass(frozen=True)
class ChiSquareResult:
    threshold: float
    table: tuple[tuple[int, int], tuple[int, int]]
    statistic: float
    pvalue: float

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "table": [list(r) for r in self.table],
            "statistic": self.statistic,
            "pvalue": self.pvalue,
        }


def pearson_chi_square(table) -> tuple[float, float]:
    """Pearson statistic (no continuity correction) and chi-square(1) p-value of a 2x2 table."""
    obs = np.asarray(table, dtype=float)
    if obs.shape != (2, 2):
        raise ValueError("expected a 2x2 table")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if np.any(rows == 0):
        raise ValueError("a region holds no storm: the independence test is undefined")
    expected = np.outer(rows, cols) / obs.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (obs - expected) ** 2 / expected, 0.0)
    stat = float(terms.sum())
    return stat, float(stats.chi2.sf(stat, df=1))


def chi_square_independence(
    storms: Sequence[WarpedStorm],
    curve: IntensityCurve | RiskCurve,
    threshold: float,
    extreme_level: int,
    *,
    stderr: TextIO | None = None,
) -> ChiSquareResult:
    """Independence of storm level and cycle position.

    Warped time is split where ``curve >= threshold`` (high) or below it
    (low); rows of the table are (high, low), columns (extreme, other).
    """
    t = np.array([s.t for s in storms], dtype=float)
    extreme = np.array([s.storm.strength >= extreme_level for s in storms], dtype=bool)
    high = curve.at(t) >= threshold
    table = (
        (int(np.sum(high & extreme)), int(np.sum(high & ~extreme))),
        (int(np.sum(~high & extreme)), int(np.sum(~high & ~extreme))),
    )
    obs = np.asarray(table, dtype=float)
    if np.any(obs.sum(axis=1) == 0):
        raise ValueError(f"threshold {threshold}: a region holds no storm, the test is undefined")
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / obs.sum()
    if np.any(expected < 5):
        print(f"WARN: chi-square at threshold {threshold}: expected cell count below 5 "
              f"(min {expected.min():.3g})", file=stderr if stderr is not None else sys.stderr)
    stat, p = pearson_chi_square(table)
    return ChiSquareResult(float(threshold), table, stat, p)


@dataclass(frozen=True)
class FrequencyRow:
    level: int
    count: int
    per_observation: float
    per_year: float


def frequency_table(
    storms: Sequence[Storm],
    series_span_years: float,
    obs_count: int,
    levels: Sequence[int] | None = None,
) -> list[FrequencyRow]:
    """Counts of storms at each exact level, per observation and per year."""
    if series_span_years <= 0 or obs_count <= 0:
        raise ValueError("span and observation count must be positive")
    strengths = [s.strength for s in storms]
    if levels is None:
        levels = sorted(set(strengths))
    rows = []
    for level in levels:
        n = sum(1 for v in strengths if v == level)
        rows.append(FrequencyRow(int(level), n, n / obs_count, n / series_span_years))
    return rows


@dataclass(frozen=True, eq=False)
class CyclePrediction:
    start: np.datetime64
    predicted_end: np.datetime64
    predicted_ssn_max: float
    covariate: float
    dates: np.ndarray
    values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    risk: RiskCurve


def predict_cycle(
    fit: HazardFit,
    base: RiskCurve,
    start: np.datetime64,
    duration_years: float,
    ssn_max: float,
    centering: float,
) -> CyclePrediction:
    """Map the mean-activity risk curve onto a new cycle's calendar.

    The curve is scaled by ``exp(beta_hat * (ssn_max - centering))`` and its
    grid sent through the inverse warp.
    """
    if not fit.converged:
        raise ValueError("fit did not converge")
    if not duration_years > 0:
        raise ValueError(f"duration must be positive, got {duration_years}")
    x = float(ssn_max - centering)
    scale = math.exp(fit.beta_hat * x)
    seconds = duration_years * SECONDS_PER_YEAR
    start = np.datetime64(start, "s")
    dates = unwarp(base.grid, start, seconds)
    end = start + np.timedelta64(int(round(seconds)), "s")
    return CyclePrediction(
        start=start,
        predicted_end=end,
        predicted_ssn_max=float(ssn_max),
        covariate=x,
        dates=dates,
        values=base.values * scale,
        ci_low=base.ci_low * scale,
        ci_high=base.ci_high * scale,
        risk=base,
    )
