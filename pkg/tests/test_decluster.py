import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stormhazard.decluster import (
    DeclusterConfig,
    Storm,
    decluster,
    gradient_series,
    max_multiplicity_stats,
    read_catalog,
    write_catalog,
    _clusters,
)
from stormhazard.ingest import LEGAL_AP_VALUES, CycleRecord

from conftest import make_series, whole_cycle

LEGAL = sorted(LEGAL_AP_VALUES)


def run(values, low=111, r=8, kind="level"):
    s = make_series(values)
    return decluster(s, [whole_cycle(s)], DeclusterConfig(low, r, kind))


def test_hand_trace_r3_merges():
    (storm,) = run([80, 120, 90, 90, 130, 80], low=111, r=3)
    assert storm.strength == 130
    assert storm.date == make_series([0] * 6).times[4]
    assert storm.length == 4
    assert storm.max_multiplicity == 1


def test_hand_trace_r2_splits():
    storms = run([80, 120, 90, 90, 130, 80], low=111, r=2)
    assert [s.strength for s in storms] == [120, 130]
    assert [s.length for s in storms] == [1, 1]


def test_no_exceedance_gives_empty_catalog():
    assert run([7, 9, 12, 94, 27]) == []


def test_first_maximum_and_multiplicity():
    values = [27, 132, 400, 400, 207, 400, 27]
    (storm,) = run(values, low=111, r=8)
    assert storm.strength == 400
    assert storm.date == make_series(values).times[2]
    assert storm.max_multiplicity == 2
    assert storm.length == 5


def test_cycle_assignment_by_date_and_drop_outside():
    values = [27] * 4 + [132, 236] + [27] * 4 + [154] + [27] * 5
    s = make_series(values)
    # first cycle ends between the two storms; second cycle starts after the last one
    c1 = CycleRecord(1, s.times[0], s.times[8], 100.0)
    c2 = CycleRecord(2, s.times[8], s.times[10], 100.0)
    err = io.StringIO()
    storms = decluster(s, [c1, c2], DeclusterConfig(111, 2), stderr=err)
    assert [(x.cycle_index, x.strength) for x in storms] == [(1, 236)]
    assert err.getvalue().startswith("WARN:")


def test_straddling_cluster_goes_to_cycle_of_its_peak():
    values = [27, 27, 132, 132, 300, 27, 27, 27]
    s = make_series(values)
    c1 = CycleRecord(1, s.times[0], s.times[3], 1.0)
    c2 = CycleRecord(2, s.times[3], s.end, 1.0)
    (storm,) = decluster(s, [c1, c2], DeclusterConfig(111, 3))
    assert storm.cycle_index == 2 and storm.length == 3


def test_config_validation():
    with pytest.raises(ValueError):
        DeclusterConfig(110)
    with pytest.raises(ValueError):
        DeclusterConfig(111, 0)
    with pytest.raises(ValueError):
        DeclusterConfig(111, 8, "slope")
    DeclusterConfig(35, 8, "gradient")


def test_gradient_series():
    g = gradient_series(make_series([15, 111]))
    assert g.values.tolist() == [96]
    assert g.times[0] == make_series([15, 111]).times[1]
    assert set(gradient_series(make_series([27] * 10)).values.tolist()) == {0}
    with pytest.raises(ValueError):
        gradient_series(make_series([7]))


def test_gradient_mode_clusters_positive_jumps():
    values = [7, 7, 67, 154, 80, 7, 7]   # jumps +60, +87
    (storm,) = run(values, low=35, r=3, kind="gradient")
    assert storm.strength == 87
    assert storm.date == make_series(values).times[3]


def test_multiplicity_stats():
    assert max_multiplicity_stats([], 400) == (0, 0)
    t = np.datetime64("2000-01-01", "s")
    storms = [Storm(1, 400, t, 3, 2), Storm(1, 300, t, 2, 3), Storm(1, 400, t, 1, 1)]
    assert max_multiplicity_stats(storms, 400) == (2, 1)
    (planted,) = run([27, 400, 400, 27])
    assert max_multiplicity_stats([planted], 400) == (1, 1)


def test_catalog_round_trip(tmp_path):
    storms = run([27, 132, 27, 27, 27, 27, 27, 27, 27, 27, 400, 400, 27], r=3)
    path = tmp_path / "storms.csv"
    write_catalog(storms, path)
    assert path.read_text().splitlines()[0] == "cycle,strength,date,length,max_multiplicity"
    assert read_catalog(path) == storms


series_values = st.lists(st.sampled_from(LEGAL), min_size=1, max_size=300)


@settings(max_examples=100, deadline=None)
@given(series_values, st.integers(1, 12))
def test_every_exceedance_in_exactly_one_cluster(values, r):
    exceed = np.asarray(values) >= 111
    clusters = _clusters(exceed, r)
    covered = np.zeros(len(values), dtype=int)
    for a, b in clusters:
        covered[a:b + 1] += 1
    assert covered.max(initial=0) <= 1
    assert int(exceed[covered == 1].sum()) == int(exceed.sum())
    storms = run(values, r=r)
    assert len(storms) == len(clusters)
    assert all(s.length >= 1 and s.max_multiplicity >= 1 and s.strength >= 111 for s in storms)
    assert all(np.diff([s.date for s in storms]).astype(np.int64) > 0) if len(storms) > 1 else True


@settings(max_examples=100, deadline=None)
@given(series_values, st.integers(1, 12), st.integers(0, 6))
def test_monotone_in_run_length(values, r, extra):
    assert len(run(values, r=r + extra)) <= len(run(values, r=r))


def test_raising_threshold_can_split_a_cluster():
    # 132 and 132 are chained through the 111 at low level 111, not at 132
    values = [132] + [27] * 4 + [111] + [27] * 4 + [132]
    assert len(run(values, low=111, r=6)) == 1
    assert len(run(values, low=132, r=6)) == 2


@settings(max_examples=200, deadline=None)
@given(series_values, st.integers(1, 12), st.sampled_from([111, 132, 154, 179]),
       st.sampled_from([132, 154, 207, 300, 400]))
def test_high_storms_inject_into_higher_threshold_catalog(values, r, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    strong = [s for s in run(values, low=lo, r=r) if s.strength >= hi]
    assert len(strong) <= len(run(values, low=hi, r=r))
