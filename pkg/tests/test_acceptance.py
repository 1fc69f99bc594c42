"""Acceptance criteria 1-18.

Each test records PASS / FAIL / SKIP in ``conftest.ACCEPTANCE``; the terminal
summary prints one line per criterion. Criteria 12-18 need the historical ap
file: set ``STORMHAZARD_HISTORICAL_AP`` (and optionally
``STORMHAZARD_HISTORICAL_CYCLES`` and ``STORMHAZARD_HISTORICAL_R``).
"""
import json
import math
import os
from contextlib import contextmanager
from functools import lru_cache

import numpy as np
import pytest

from stormhazard import cli
from stormhazard.decluster import DeclusterConfig, Storm, decluster, max_multiplicity_stats
from stormhazard.hazard import CycleCounts, count_by_cycle, estimate_p400, fit_beta, warp_catalog
from stormhazard.ingest import LEGAL_AP_VALUES, center_covariates, historical_cycles_path, load_dataset, parse_cycles
from stormhazard.kernel import (
    IntensityCurve,
    KernelConfig,
    cv_bandwidth,
    estimate_lambda0,
    evaluate_lambda0,
    ongoing_correction,
    to_per_year,
)
from stormhazard.risk import chi_square_independence, extrapolate, frequency_table, pearson_chi_square
from stormhazard.simulate import (
    SimSpec,
    historical_like_lambda0,
    make_rng,
    replicate_rng,
    simulate_counts,
    simulate_events,
)

from conftest import ACCEPTANCE, grid_search_beta, loglik_direct, make_series, numeric_hessian, random_design, whole_cycle


@contextmanager
def criterion(key):
    detail = {}
    try:
        yield detail
    except pytest.skip.Exception:
        ACCEPTANCE[key] = "SKIP"
        raise
    except BaseException:
        ACCEPTANCE[key] = "FAIL" + (f" ({detail['note']})" if "note" in detail else "")
        raise
    ACCEPTANCE[key] = "PASS" + (f" ({detail['note']})" if "note" in detail else "")


def designs():
    return [random_design(np.random.default_rng(1000 + i)) for i in range(50)]


def historical_design():
    cycles, _ = center_covariates(parse_cycles(historical_cycles_path()))
    return cycles


# ---------------------------------------------------------------------------
# property-based

def test_01_mle_matches_grid_search():
    with criterion("1 mle-oracle") as d:
        worst_gap = worst_res = 0.0
        for c in designs():
            fit = fit_beta(c)
            worst_gap = max(worst_gap, abs(fit.beta_hat - grid_search_beta(c.n, c.d, c.x)))
            worst_res = max(worst_res, abs(fit.residual))
        d["note"] = f"max |beta - grid| = {worst_gap:.2e}, max residual = {worst_res:.1e}"
        assert worst_gap <= 2e-6
        assert worst_res < 1e-10


def test_02_fisher_matches_numeric_hessian():
    with criterion("2 fisher-hessian") as d:
        worst = 0.0
        for c in designs():
            fit = fit_beta(c)
            p = np.array([fit.alpha_hat, fit.beta_hat])
            neg = lambda v: -loglik_direct(c.n, c.d, c.x, v[0], v[1])
            hess = numeric_hessian(neg, p, [1e-4 * fit.alpha_hat, 1e-4 / np.std(c.x)])
            worst = max(worst, float(np.max(np.abs(hess - fit.fisher) / np.abs(fit.fisher))))
        d["note"] = f"max componentwise relative error {worst:.1e}"
        assert worst <= 1e-3


def test_03_symmetric_design():
    with criterion("3 symmetry") as d:
        worst = 0.0
        for x, n, dur in [(10.0, 40, 11.0), (33.3, 7, 9.5), (58.8, 120, 12.6), (0.5, 1, 1.0)]:
            fit = fit_beta(CycleCounts.from_arrays([n, n], [dur, dur], [-x, x]))
            worst = max(worst, abs(fit.beta_hat))
        d["note"] = f"max |beta| = {worst:.1e}"
        assert worst <= 1e-12


def test_04_sufficiency():
    with criterion("4 sufficiency"):
        cycles = historical_design()
        rng = make_rng(4)
        spec = SimSpec(historical_like_lambda0(), cycles, beta=0.006)
        storms = [e.storm for per in simulate_events(spec, rng) for e in per]
        base = fit_beta(count_by_cycle(storms, cycles))
        by_index = {c.index: c for c in cycles}
        for _ in range(5):
            moved = []
            for s in storms:
                c = by_index[s.cycle_index]
                span = int((c.end - c.start).astype(np.int64))
                when = c.start + np.timedelta64(int(rng.integers(0, span)), "s")
                moved.append(Storm(s.cycle_index, s.strength, when, s.length, s.max_multiplicity))
            again = fit_beta(count_by_cycle(moved, cycles))
            assert again.beta_hat == base.beta_hat
            assert again.alpha_hat == base.alpha_hat


def test_05_ci_coverage():
    with criterion("5 coverage") as d:
        spec = SimSpec(historical_like_lambda0(9.3), historical_design(), beta=0.006)
        d_ = np.array([c.duration_years for c in spec.cycles])
        x = np.array([c.covariate for c in spec.cycles])
        hits = 0
        for i in range(200):
            n = simulate_counts(spec, replicate_rng(5, i))
            lo, hi = fit_beta(CycleCounts.from_arrays(n, d_, x)).beta_ci
            hits += lo <= 0.006 <= hi
        d["note"] = f"coverage {hits / 200:.3f}"
        assert hits / 200 >= 0.88


def test_06_kernel_mass_conservation():
    with criterion("6 kernel-mass") as d:
        worst = 0.0
        rng = np.random.default_rng(6)
        for _ in range(20):
            j = int(rng.integers(2, 8))
            counts = CycleCounts.from_arrays(rng.integers(1, 60, j), rng.uniform(8, 13, j), rng.uniform(-60, 60, j))
            beta = float(rng.uniform(-0.01, 0.01))
            events = rng.uniform(-0.5, 0.5, int(counts.n.sum()))
            for h in (0.01, 0.025, 0.05, 0.1, 0.15):
                curve = estimate_lambda0(events, counts, KernelConfig(h=h), beta=beta)
                target = events.size / counts.q(beta).sum()
                worst = max(worst, abs(curve.integral() / target - 1.0))
                assert curve.values[0] == curve.values[-1]
        d["note"] = f"max relative mass error {worst:.1e}"
        assert worst <= 1e-6


def test_07_kernel_variance_formula():
    with criterion("7 kernel-variance") as d:
        h = 0.05
        lam0 = historical_like_lambda0(9.3, 0.6)
        spec = SimSpec(lam0, historical_design(), beta=0.006)
        sum_q = sum(c.duration_years * math.exp(0.006 * c.covariate) for c in spec.cycles)
        points = np.linspace(-0.4, 0.4, 10)
        draws = np.empty((500, points.size))
        for i in range(500):
            events = np.array([e.t for per in simulate_events(spec, replicate_rng(7, i)) for e in per])
            draws[i] = evaluate_lambda0(points, events, h, 1.0 / sum_q)
        empirical = draws.var(axis=0, ddof=1)
        formula = lam0(points) / (sum_q * 2.0 * math.sqrt(math.pi) * h)
        rel = np.abs(empirical / formula - 1.0)
        d["note"] = f"max relative deviation {rel.max():.3f}"
        assert np.all(rel <= 0.15)


def test_08_declustering():
    with criterion("8 declustering") as d:
        s = make_series([80, 120, 90, 90, 130, 80])
        cyc = [whole_cycle(s)]
        (one,) = decluster(s, cyc, DeclusterConfig(111, 3))
        assert (one.strength, one.date, one.length) == (130, s.times[4], 4)
        two = decluster(s, cyc, DeclusterConfig(111, 2))
        assert [x.strength for x in two] == [120, 130]

        m = make_series([27, 132, 400, 400, 207, 400, 27])
        (storm,) = decluster(m, [whole_cycle(m)], DeclusterConfig(111, 8))
        assert (storm.strength, storm.date, storm.max_multiplicity) == (400, m.times[2], 2)

        legal = np.array(sorted(LEGAL_AP_VALUES))
        weights = np.exp(-legal / 40.0)
        rng = np.random.default_rng(8)
        r_bad = thr_bad = 0
        for _ in range(100):
            series = make_series(rng.choice(legal, size=400, p=weights / weights.sum()))
            cycles = [whole_cycle(series)]
            by_r = [len(decluster(series, cycles, DeclusterConfig(27, r))) for r in range(1, 13)]
            r_bad += any(b > a for a, b in zip(by_r, by_r[1:]))
            lows = [v for v in legal if 15 <= v <= 154]
            by_low = [len(decluster(series, cycles, DeclusterConfig(int(v), 4))) for v in lows]
            thr_bad += any(b > a for a, b in zip(by_low, by_low[1:]))
        d["note"] = f"run-length violations {r_bad}/100, threshold violations {thr_bad}/100"
        assert r_bad == 0
        assert thr_bad == 0


def test_09_chi_square_fixture():
    with criterion("9 chi-square-fixture") as d:
        stat, p = pearson_chi_square([[10, 90], [40, 60]])
        d["note"] = f"statistic {stat:.4f}, p {p:.2e}"
        assert abs(stat - 23.81) <= 0.01


def test_10_correction_factor():
    with criterion("10 correction-factor"):
        grid = np.linspace(-0.5, 0.5, 512)
        vals = 1.0 + 0.5 * np.sin(2 * np.pi * grid) ** 2
        curve = IntensityCurve(grid, vals, vals * 0.8, vals * 1.2, 0.035, 0.01)
        out = ongoing_correction(curve, (23, 6))
        assert out.correction_factor == 29 / 23
        assert np.array_equal(out.values, vals * (29 / 23))
        assert np.array_equal(out.ci_low, vals * 0.8 * (29 / 23))
        assert np.array_equal(out.ci_high, vals * 1.2 * (29 / 23))


def test_11_cli_replay(tmp_path):
    with criterion("11 replay"):
        cycles = tmp_path / "cycles.csv"
        cycles.write_text("cycle,start,end,ssn_max\n1,2000-01-01,2003-01-01,90\n2,2003-01-01,2006-07-01,180\n"
                          "3,2006-07-01,2009-01-01,120\n4,2009-01-01,2012-06-01,150\n", encoding="utf-8")
        assert cli.main(["simulate", "--cycles", str(cycles), "--out-dir", str(tmp_path / "sim"),
                         "--emit", "series", "--alpha", "25", "--p-extreme", "0.1", "--seed", "3"]) == 0
        data = ["--ap", str(tmp_path / "sim" / "ap.csv"), "--cycles", str(cycles)]
        runs = {
            "sim": None,
            "pipe": ["pipeline", *data, "--threshold", "3", "--low-level", "111", "--low-level", "132"],
            "pred": ["predict", *data, "--start", "2012-06-01", "--ssn-max", "110"],
            "grad": ["fit", *data, "--strength", "gradient"],
        }
        for name, argv in runs.items():
            first = tmp_path / name
            if argv is not None:
                assert cli.main([*argv, "--out-dir", str(first)]) == 0
            second = tmp_path / f"{name}_replay"
            assert cli.main(["replay", str(first / "config.json"), "--out-dir", str(second)]) == 0
            names = sorted(p.name for p in first.iterdir())
            assert names == sorted(p.name for p in second.iterdir())
            for fname in names:
                a, b = (first / fname).read_bytes(), (second / fname).read_bytes()
                if fname == "config.json":
                    ca, cb = json.loads(a), json.loads(b)
                    ca.pop("out_dir"), cb.pop("out_dir")
                    assert ca == cb
                else:
                    assert a == b, fname


# ---------------------------------------------------------------------------
# historical-data reproduction

TABLE_COUNTS = {111: 182, 132: 158, 154: 103, 179: 84, 207: 51, 236: 57, 300: 44, 400: 23}
P400_CI = {111: (0.018477, 0.044291), 132: (0.024765, 0.059045), 154: (0.035266, 0.083333)}


@lru_cache(maxsize=1)
def _load_historical(ap, cycles):
    return load_dataset(ap, cycles, "lenient")


def historical():
    ap = os.environ.get("STORMHAZARD_HISTORICAL_AP")
    if not ap:
        pytest.skip("STORMHAZARD_HISTORICAL_AP not set")
    return _load_historical(ap, os.environ.get("STORMHAZARD_HISTORICAL_CYCLES") or str(historical_cycles_path()))


def historical_r():
    return int(os.environ.get("STORMHAZARD_HISTORICAL_R", "8"))


def level_run(data, low, kind="level"):
    storms = decluster(data.series, list(data.cycles), DeclusterConfig(low, historical_r(), kind))
    fit = fit_beta(count_by_cycle(storms, data.cycles))
    return storms, fit


def risk_curve(data, storms, fit, h="auto"):
    counts = count_by_cycle(storms, data.cycles)
    warped = warp_catalog(storms, data.cycles)
    curve = to_per_year(estimate_lambda0(warped, counts, KernelConfig(h=h), fit), 0.0, fit)
    corrected = ongoing_correction(curve, max_multiplicity_stats(storms, 400))
    return warped, extrapolate(corrected, estimate_p400(storms, 400), data.cycle_years)


def test_12_table_counts():
    with criterion("12 table-counts") as d:
        data = historical()
        raw = int(np.sum(data.series.values == 400))
        matches = []
        for r in range(4, 17):
            storms = decluster(data.series, list(data.cycles), DeclusterConfig(111, r))
            rows = {row.level: row.count for row in frequency_table(
                storms, data.cycle_years, data.observations_in_cycles(), levels=list(TABLE_COUNTS))}
            if all(abs(rows[k] - v) <= 0.05 * v for k, v in TABLE_COUNTS.items()) and rows[400] == 23:
                matches.append(r)
        d["note"] = f"r matching: {matches}, raw 400 exceedances {raw}"
        assert matches
        assert raw == 29


def test_13_beta():
    with criterion("13 beta") as d:
        data = historical()
        _, fit = level_run(data, 111)
        d["note"] = f"beta {fit.beta_hat:.7f}, CI [{fit.beta_ci[0]:.7f}, {fit.beta_ci[1]:.7f}], LRT p {fit.lrt_pvalue:.2e}"
        assert abs(fit.beta_hat - 0.0059651) <= 0.1 * 0.0059651
        assert fit.beta_ci[0] <= 0.0083429 and fit.beta_ci[1] >= 0.0035873
        assert fit.lrt_pvalue < 1e-5


def test_14_p400():
    with criterion("14 p400") as d:
        data = historical()
        got = {}
        for low, (lo, hi) in P400_CI.items():
            storms, _ = level_run(data, low)
            got[low] = estimate_p400(storms, 400).p_hat
        d["note"] = ", ".join(f"{k}: {v:.6f}" for k, v in got.items())
        for low, (lo, hi) in P400_CI.items():
            assert lo <= got[low] <= hi


def test_15_cv_bandwidth():
    with criterion("15 bandwidth") as d:
        data = historical()
        storms, fit = level_run(data, 111)
        warped = warp_catalog(storms, data.cycles)
        h = cv_bandwidth(warped, count_by_cycle(storms, data.cycles), beta=fit.beta_hat)
        d["note"] = f"h = {h:.4f}"
        assert 0.025 <= h <= 0.050


def test_16_extreme_frequency():
    with criterion("16 extreme-frequency") as d:
        data = historical()
        storms, _ = level_run(data, 111)
        k = sum(s.strength >= 400 for s in storms)
        freq = k / data.cycle_years
        d["note"] = f"{freq:.3f} per year"
        assert abs(freq - 0.29) <= 0.02


def test_17_independence():
    with criterion("17 independence") as d:
        data = historical()
        storms, fit = level_run(data, 111)
        warped, risk = risk_curve(data, storms, fit)
        pvals = {thr: chi_square_independence(warped, risk, thr, 400).pvalue for thr in (0.29, 0.40, 0.50, 0.60)}
        d["note"] = ", ".join(f"{k}: p={v:.3f}" for k, v in pvals.items())
        assert all(p > 0.05 for p in pvals.values())


def test_18_gradient_beta():
    with criterion("18 gradient-beta") as d:
        data = historical()
        _, fit = level_run(data, 35, "gradient")
        d["note"] = f"beta {fit.beta_hat:.7f}, CI [{fit.beta_ci[0]:.7f}, {fit.beta_ci[1]:.7f}]"
        assert abs(fit.beta_hat - 0.0053499) <= 0.15 * 0.0053499
        assert fit.beta_ci[0] <= 0.006887 and fit.beta_ci[1] >= 0.0038128
