"""Proportional-hazard model on warped cycle time.

Per cycle ``j`` the storm counting process has intensity
``lambda0(t) * D_j * exp(beta * X_j)`` on ``t in [-0.5, 0.5]``. Only the
per-cycle totals ``N_j`` carry information about ``beta``, so the fit works
on :class:`CycleCounts` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .decluster import Storm
from .ingest import CycleRecord

__all__ = [
    "WarpedStorm",
    "CycleCounts",
    "HazardFit",
    "P400Estimate",
    "ConvergenceError",
    "warp",
    "unwarp",
    "warp_catalog",
    "count_by_cycle",
    "log_likelihood",
    "profile_log_likelihood",
    "fisher_information",
    "fit_beta",
    "estimate_p400",
    "p400_from_counts",
    "sufficiency_check",
]

Z95 = 1.96


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class WarpedStorm:
    storm: Storm
    t: float

    def __post_init__(self):
        if not -0.5 <= self.t <= 0.5:
            raise ValueError(f"warped time {self.t} outside [-0.5, 0.5]")


def warp(storm: Storm, cycle: CycleRecord) -> WarpedStorm:
    return WarpedStorm(storm, warp_time(storm.date, cycle))


def warp_time(date: np.datetime64, cycle: CycleRecord) -> float:
    if not cycle.start <= date <= cycle.end:
        raise ValueError(f"date {date} outside cycle {cycle.index} ({cycle.start} .. {cycle.end})")
    num = float((date - cycle.start).astype("timedelta64[s]").astype(np.int64))
    den = float((cycle.end - cycle.start).astype("timedelta64[s]").astype(np.int64))
    return min(0.5, max(-0.5, num / den - 0.5))


def unwarp(t: float | np.ndarray, start: np.datetime64, duration_seconds: float) -> np.ndarray:
    """Calendar instants (``datetime64[s]``) for warped times ``t``."""
    offset = np.rint((np.asarray(t, dtype=float) + 0.5) * duration_seconds).astype(np.int64)
    return np.datetime64(start, "s") + offset.astype("timedelta64[s]")


def warp_catalog(storms: Sequence[Storm], cycles: Sequence[CycleRecord]) -> list[WarpedStorm]:
    by_index = {c.index: c for c in cycles}
    out = []
    for s in storms:
        try:
            cycle = by_index[s.cycle_index]
        except KeyError:
            raise ValueError(f"storm dated {s.date} refers to unknown cycle {s.cycle_index}") from None
        out.append(warp(s, cycle))
    return out


@dataclass(frozen=True, eq=False)
class CycleCounts:
    """Per-cycle totals and design: ``n`` (counts), ``d`` (years), ``x`` (covariate)."""

    index: np.ndarray
    n: np.ndarray
    d: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        d = np.asarray(self.d, dtype=float)
        x = np.asarray(self.x, dtype=float)
        index = np.asarray(self.index, dtype=np.int64)
        if not (n.shape == d.shape == x.shape == index.shape) or n.ndim != 1:
            raise ValueError("counts, durations and covariates must be 1-d and aligned")
        if np.any(n < 0):
            raise ValueError("counts must be nonnegative")
        if np.any(d <= 0):
            raise ValueError("durations must be positive")
        for name, arr in (("index", index), ("n", n), ("d", d), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, n, d, x) -> "CycleCounts":
        n = np.asarray(n)
        return cls(np.arange(1, n.size + 1), n, d, x)

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def q(self, beta: float) -> np.ndarray:
        """``Q_j = D_j exp(beta X_j)``."""
        return self.d * np.exp(beta * self.x)


def count_by_cycle(storms: Sequence[WarpedStorm | Storm], cycles: Sequence[CycleRecord]) -> CycleCounts:
    pos = {c.index: k for k, c in enumerate(cycles)}
    n = np.zeros(len(cycles), dtype=np.int64)
    for s in storms:
        storm = s.storm if isinstance(s, WarpedStorm) else s
        try:
            n[pos[storm.cycle_index]] += 1
        except KeyError:
            raise ValueError(f"storm refers to unknown cycle {storm.cycle_index}") from None
    return CycleCounts(
        np.array([c.index for c in cycles]),
        n,
        np.array([c.duration_years for c in cycles]),
        np.array([c.covariate for c in cycles]),
    )


def log_likelihood(counts: CycleCounts, alpha: float, beta: float) -> float:
    """Poisson log-likelihood of the cycle totals (weights ``1/N_j!`` dropped)."""
    n = counts.n
    return float(
        -alpha * counts.q(beta).sum()
        + math.log(alpha) * n.sum()
        + (n * np.log(counts.d)).sum()
        + beta * (n * counts.x).sum()
    )


def profile_log_likelihood(counts: CycleCounts, beta) -> np.ndarray:
    """Log-likelihood maximised over alpha, up to a beta-free constant.

    Vectorised over ``beta``; uses ``alpha(beta) = sum N / sum Q(beta)``.
    """
    beta = np.asarray(beta, dtype=float)
    total = counts.n.sum()
    # shift covariates for stability; the shift only adds a beta-linear term that we restore
    shift = counts.x.mean()
    xs = counts.x - shift
    s0 = (counts.d[None, :] * np.exp(np.multiply.outer(beta.ravel(), xs))).sum(axis=1)
    nx = (counts.n * xs).sum()
    prof = -total * np.log(s0) + beta.ravel() * nx
    return prof.reshape(beta.shape)


def fisher_information(counts: CycleCounts, alpha: float, beta: float) -> np.ndarray:
    """Expected information for ``(alpha, beta)``."""
    q = counts.q(beta)
    s0 = q.sum()
    s1 = (q * counts.x).sum()
    s2 = (q * counts.x ** 2).sum()
    return np.array([[s0 / alpha, s1], [s1, alpha * s2]])


def _score_beta(counts: CycleCounts, beta: float) -> float:
    """``sum N X / sum N - weighted mean of X under Q(beta)``; decreasing in beta."""
    xs = counts.x - counts.x.mean()
    w = counts.d * np.exp(beta * xs - np.max(beta * xs))
    return float((counts.n * xs).sum() / counts.n.sum() - (w * xs).sum() / w.sum())


@dataclass(frozen=True)
class HazardFit:
    beta_hat: float
    alpha_hat: float
    beta_ci: tuple[float, float]
    fisher: np.ndarray
    lrt_pvalue: float
    lrt_statistic: float
    converged: bool
    residual: float
    iterations: int

    @property
    def beta_se(self) -> float:
        return float(math.sqrt(np.linalg.inv(self.fisher)[1, 1]))


def fit_beta(counts: CycleCounts, tol: float = 1e-10, max_iter: int = 100) -> HazardFit:
    """Maximum likelihood for ``(alpha, beta)`` by the secant method on the profile score.

    The secant iteration starts from ``beta = 0`` and ``beta = 1e-3`` and
    stops when the beta score, normalised by ``sum N * sd(X)``, is below
    ``tol``. ``alpha_hat = sum N / sum Q(beta_hat)``. The 95% interval uses
    the (2, 2) entry of the inverse Fisher matrix; the likelihood-ratio test
    of ``beta = 0`` is referred to chi-square(1).
    """
    total = counts.total
    if total < 1:
        raise ValueError("no events: the fit needs at least one storm")
    sd = float(np.std(counts.x))
    if counts.x.size < 2 or sd == 0.0 or np.ptp(counts.x) <= 1e-12 * max(1.0, np.abs(counts.x).max()):
        raise ValueError("degenerate covariate: all X_j are equal, beta is not identifiable")

    def g(b: float) -> float:
        return _score_beta(counts, b) / sd

    b0, b1 = 0.0, 1e-3
    g0, g1 = g(b0), g(b1)
    converged = abs(g0) < tol
    if converged:
        b1, g1 = b0, g0
    it = 0
    while not converged and it < max_iter:
        it += 1
        if g1 == g0:
            break
        b2 = b1 - g1 * (b1 - b0) / (g1 - g0)
        if not math.isfinite(b2):
            break
        b0, g0 = b1, g1
        b1, g1 = b2, g(b2)
        converged = abs(g1) < tol
    if not converged:
        raise ConvergenceError(
            f"secant iteration did not converge in {max_iter} steps (beta={b1!r}, residual={g1!r}); "
            "the MLE may not exist for this design"
        )
    beta = float(b1)
    q = counts.q(beta)
    alpha = total / float(q.sum())
    fisher = fisher_information(counts, alpha, beta)
    var = float(np.linalg.inv(fisher)[1, 1])
    half = Z95 * math.sqrt(var)

    alpha0 = total / float(counts.d.sum())
    lrt = 2.0 * (log_likelihood(counts, alpha, beta) - log_likelihood(counts, alpha0, 0.0))
    lrt = max(lrt, 0.0)
    return HazardFit(
        beta_hat=beta,
        alpha_hat=float(alpha),
        beta_ci=(beta - half, beta + half),
        fisher=fisher,
        lrt_pvalue=float(stats.chi2.sf(lrt, df=1)),
        lrt_statistic=float(lrt),
        converged=True,
        residual=float(g1),
        iterations=it,
    )


@dataclass(frozen=True)
class P400Estimate:
    p_hat: float
    m: int
    k: int
    ci: tuple[float, float]


def p400_from_counts(k: int, m: int) -> P400Estimate:
    """Empirical proportion ``k/m`` with the Wald 95% interval, clipped to [0, 1]."""
    if m <= 0:
        raise ValueError("empty catalog: P400 needs at least one high-level storm")
    if not 0 <= k <= m:
        raise ValueError(f"extreme count {k} must lie in [0, {m}]")
    p = k / m
    half = Z95 * math.sqrt(p * (1.0 - p) / m)
    return P400Estimate(p, m, k, (max(0.0, p - half), min(1.0, p + half)))


def estimate_p400(storms: Sequence[Storm | WarpedStorm], extreme_level: int) -> P400Estimate:
    """Share of the catalog reaching ``extreme_level``; the catalog is the high-storm set."""
    strengths = [s.storm.strength if isinstance(s, WarpedStorm) else s.strength for s in storms]
    return p400_from_counts(sum(1 for v in strengths if v >= extreme_level), len(strengths))


def sufficiency_check(counts_a: CycleCounts, counts_b: CycleCounts) -> bool:
    return fit_beta(counts_a).beta_hat == fit_beta(counts_b).beta_hat
