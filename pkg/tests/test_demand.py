from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from vedge.demand import (DemandParams, HotRanking, ServiceCatalog, _sample_distinct,
                          drift_preferences, hot_ranking, interest_score, select_service,
                          sleep_duration, sleep_seconds, upload_services)
from vedge.synthgen import GenConfig, generate_feature_vectors, generate_services
from vedge.worldmodel import SdvState, ServiceSpec


def catalog(n=200, dim=8, seed=0):
    cfg = GenConfig(service_count=n, vector_len=dim, cluster_count=4)
    rng = np.random.default_rng(seed)
    centers, vecs, labels = generate_feature_vectors(cfg, rng)
    return ServiceCatalog(generate_services(cfg, rng, vecs, labels)), centers, cfg


def vehicle(pref):
    v = SdvState(0, (0.0, 0.0))
    v.preference = np.asarray(pref, dtype=float)
    return v


def test_interest_score_worked_example():
    s = ServiceSpec(0, 1.0, 4.0, 1.0, np.array([1.0, 0.0]), 0, 1.0)
    assert interest_score(vehicle([1.0, 1.0]), s) == pytest.approx(4.0 / math.sqrt(2))
    assert interest_score(vehicle([0.0, 0.0]), s) == 0.0


def brute_select(v, cat, cands, params):
    best = None
    for sid in sorted(cands):
        sc = interest_score(v, cat[sid])
        if sid in v.accessed_history:
            sc *= params.discount
        if best is None or sc > best[0]:
            best = (sc, sid)
    return best[1]


@given(st.integers(0, 10_000), st.lists(st.integers(0, 199), max_size=10),
       st.lists(st.integers(0, 199), max_size=30), st.floats(0.1, 1.0))
def test_select_matches_brute_force(seed, hot, seen, eps):
    cat, centers, _ = catalog()
    params = DemandParams(window=20, discount=eps)
    v = vehicle(centers[seed % len(centers)] + 0.1)
    v.accessed_history = {s: 0 for s in seen}
    got = select_service(v, cat, hot, params, np.random.default_rng(seed))
    cands = set(_sample_distinct(len(cat), 20, np.random.default_rng(seed))) | set(hot)
    assert got == brute_select(v, cat, cands, params)


def test_discount_moves_vehicle_off_its_favourite():
    cat, centers, _ = catalog()
    v = vehicle(centers[0])
    params = DemandParams(window=len(cat), discount=0.01)
    first = select_service(v, cat, [], params, np.random.default_rng(0))
    v.accessed_history[first] = 0
    assert select_service(v, cat, [], params, np.random.default_rng(0)) != first
    params = DemandParams(window=len(cat), discount=1.0)
    assert select_service(v, cat, [], params, np.random.default_rng(0)) == first


@given(st.integers(1, 50), st.integers(1, 80), st.integers(0, 1000))
def test_sample_distinct(k, num, seed):
    got = _sample_distinct(k, num, np.random.default_rng(seed))
    assert len(got) == min(k, num) == len(set(got))
    assert all(0 <= x < k for x in got)


def test_sleep_uniform_on_k_2k():
    p = DemandParams(sleep_k=3.0, sleep_sigma=1.0)
    x = sleep_seconds(0.0, 1.0 + p.sleep_sigma, p, np.random.default_rng(0), size=20_000)
    assert x.min() >= 3.0 and x.max() <= 6.0
    assert stats.kstest(x, "uniform", args=(3.0, 3.0)).pvalue > 0.01


class _Floor:
    """Stand-in generator whose uniform draw is always the lower end."""

    def uniform(self, a, b, size=None):
        return a


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 40.0))
def test_sleep_lower_bound_grows_with_acceleration(a1, a2, v):
    p = DemandParams(sleep_k=1.0)
    lo, hi = sorted((a1, a2))
    # only |a| matters
    assert sleep_seconds(-hi, v, p, _Floor()) == sleep_seconds(hi, v, p, _Floor())
    if hi - lo > 1e-9:
        assert sleep_seconds(lo, v, p, _Floor()) < sleep_seconds(hi, v, p, _Floor())


def test_slow_vehicle_has_fixed_sleep():
    p = DemandParams(sleep_k=2.0)
    assert sleep_seconds(0.0, 0.5, p, np.random.default_rng(0)) == 2.0


def test_sleep_duration_rounds_up_to_ticks():
    p = DemandParams(sleep_k=2.0)
    v = SdvState(0, (0, 0), velocity=0.0)
    assert sleep_duration(v, p, np.random.default_rng(0), 0.3) == 7


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 20)), max_size=200),
       st.integers(1, 60), st.integers(0, 12))
def test_incremental_hot_ranking_matches_recount(log, window, k):
    log.sort()
    params = DemandParams(hot_window_ticks=window, hot_list_len=k)
    inc = HotRanking(params)
    i = 0
    for t in range(0, 101, 7):
        while i < len(log) and log[i][0] <= t:
            inc.record(*log[i])
            i += 1
        assert inc.rebuild(t) == hot_ranking(log[:i], params, t)


def test_hot_ranking_ties_go_to_lower_id():
    params = DemandParams(hot_window_ticks=10, hot_list_len=2)
    assert hot_ranking([(1, 5), (2, 3), (3, 9), (4, 9)], params, 5) == [9, 3]


def test_drift_stays_in_box():
    p = DemandParams(drift_std=5.0)
    x = drift_preferences(np.full((10, 4), 9.9), p, np.random.default_rng(0))
    assert x.min() >= 0.0 and x.max() <= 10.0


def test_upload_appends_contiguous_ids():
    cat, centers, cfg = catalog()
    params = DemandParams(upload_rate=3.0)
    new = upload_services(cat, centers, cfg, params, np.random.default_rng(0), 5, count=4,
                          cluster=2)
    assert [s.id for s in new] == list(range(200, 204))
    assert all(s.cluster_id == 2 for s in new) and len(cat) == 204
    assert cat.features.shape == (204, 8)
