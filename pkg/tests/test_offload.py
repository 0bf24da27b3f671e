from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import expected_total, queue_wait_by_events, random_snapshot
from vedge.channel import ChannelParams
from vedge.offload import (OFFLOAD_POLICIES, CdcView, ComputeJob, Infeasible, OffloadDecision,
                           PolicyContext, RsuView, SdvView, TaskRequest, Tier, cdc_terms, decide,
                           get_offload_policy, queue_time, register_offload_policy, rsu_terms,
                           tier_total, time_cdc, time_local, time_rsu, total_task_time)
from vedge.worldmodel import CdcState, RsuState, SdvState


def task(cpu=100e9, size=1e6):
    return TaskRequest(0, 0, cpu, size, 30.0, 0)


def terms_for(task_, v, r, cdc, ch, d, rate, relay):
    if d.tier is Tier.LOCAL:
        return {"compute": time_local(task_, v)}
    if d.tier is Tier.RSU:
        return rsu_terms(task_, r, rate, relay)
    return cdc_terms(task_, cdc, r, rate, ch)


def test_idle_rsu_compute_term():
    # 100 GFLOP on a 100 GFLOPS RSU over an instant link
    r = RsuState(0, (0, 0), 1000, compute_capacity=100e9)
    assert time_rsu(task(), r, float("inf")) == pytest.approx(1.0)


def test_local_time_and_storage_check():
    v = SdvState(0, (0, 0), compute_capacity=10e9)
    v.cache.capacity_bytes = 4e9
    assert time_local(task(cpu=20e9), v) == pytest.approx(2.0)
    with pytest.raises(Infeasible):
        time_local(task(size=5e9), v)


def test_cdc_time_terms():
    r = RsuState(0, (0.0, 0.0), 1000)
    cdc = CdcState(disk={}, compute_capacity=10e12, position=(0.0, -300e3), active_tasks=1)
    ch = ChannelParams()
    t = time_cdc(task(cpu=10e12, size=1e6), cdc, r, 8e6, ch)
    assert t == pytest.approx(1.0 + 2.0 + 2 * 300e3 / (3e8 * 0.67))
    r.backhaul_up = False
    with pytest.raises(Infeasible):
        time_cdc(task(), cdc, r, 8e6, ch)


def test_queue_time_single_slot_is_sum():
    r = RsuState(0, (0, 0), 1, compute_capacity=1.0, concurrency_limit=1)
    r.running_tasks = [ComputeJob(0, 10, 3)]
    r.queue = [ComputeJob(1, 4, 4), ComputeJob(2, 5, 5)]
    assert queue_time(r) == 12.0


@given(st.integers(1, 5), st.lists(st.floats(0, 100), max_size=5),
       st.lists(st.floats(0.01, 100), max_size=6))
def test_queue_time_matches_event_oracle(limit, residuals, queued):
    residuals = residuals[:limit]
    if len(residuals) < limit:
        queued = []
    r = RsuState(0, (0, 0), 1, compute_capacity=1.0, concurrency_limit=limit)
    r.running_tasks = [ComputeJob(i, x + 1, x) for i, x in enumerate(residuals)]
    r.queue = [ComputeJob(10 + i, q, q) for i, q in enumerate(queued)]
    assert queue_time(r) == pytest.approx(queue_wait_by_events(residuals, queued, limit),
                                          rel=1e-12, abs=1e-12)


def test_total_time_matches_first_principles():
    rng = np.random.default_rng(5)
    for _ in range(500):
        snap = random_snapshot(rng)
        got = total_task_time(snap[5], terms_for(snap[0], *snap[1:]))
        assert got == pytest.approx(expected_total(*snap), rel=1e-12)


@given(st.sampled_from([(1, 0), (1, 1), (0, 1), (0, 0)]),
       st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3))
def test_tier_total_selects_one_term(ab, tl, tr, tc):
    a, b = ab
    want = tl if a else (tr if b else tc)
    assert tier_total(a, b, tl, tr, tc) == want


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

def view(i, *, in_range=True, alive=True, rate=1e9, load=0.0, running=(), f=100e9):
    return RsuView(id=i, position=(0.0, 0.0), coverage_radius=1000.0, compute_capacity=f,
                   concurrency_limit=1, tx_power=10.0, running_tasks=tuple(running), queue=(),
                   n_transmitting=0, cached=frozenset(), cache_free=1e9, alive=alive,
                   backhaul_up=True, distance=10.0, in_range=in_range,
                   reachable=alive, est_rate=rate, rtt=0.002, load=load)


def ctx(rsus, hop=0, cache=1e9, f_local=10e9, f_cdc=10e12):
    sdv = SdvView(id=0, position=(0, 0), compute_capacity=f_local, tx_power=1.0,
                  cache_capacity=cache, cache_free=cache, cached=frozenset(), hop=hop)
    return PolicyContext(0, 0.1, sdv, tuple(rsus), CdcView(f_cdc, 0, (0.0, -300e3)))


def test_least_time_prefers_idle_rsu():
    busy = view(0, running=[ComputeJob(0, 1e12, 1e12)])
    idle = view(1)
    pol = get_offload_policy("nearest-feasible-least-loaded")
    assert pol(ctx([busy, idle], f_cdc=1e9), task()) == OffloadDecision.rsu(1)
    # a fast CDC wins over both
    assert pol(ctx([busy, idle]), task()).tier is Tier.CDC


def test_least_time_goes_local_for_tiny_jobs_without_rsu():
    c = ctx([view(0, in_range=False)], hop=None)
    d = get_offload_policy("nearest-feasible-least-loaded")(c, task(cpu=1e6))
    assert d.tier is Tier.LOCAL


def test_nearest_rsu_policy():
    p = get_offload_policy("nearest-rsu")
    assert p(ctx([view(0), view(1)], hop=1), task()) == OffloadDecision.rsu(1)
    assert p(ctx([view(0)], hop=None), task()).tier is Tier.LOCAL
    assert p(ctx([view(0)], hop=None, cache=0.0), task()).tier is Tier.CDC


def test_decide_falls_back_to_cdc():
    c = ctx([view(0, alive=False)])
    d, ok = decide(lambda *_: OffloadDecision.rsu(0), c, task())
    assert d.tier is Tier.CDC and not ok
    d, ok = decide(lambda *_: OffloadDecision.rsu(7), c, task())
    assert d.tier is Tier.CDC and not ok
    d, ok = decide(lambda *_: OffloadDecision.local(), ctx([view(0)], cache=10.0), task())
    assert d.tier is Tier.CDC and not ok


def test_decide_survives_broken_policies():
    def boom(c, t):
        raise RuntimeError("bug")

    assert decide(boom, ctx([view(0)]), task()) == (OffloadDecision.cdc(), False)
    assert decide(lambda *_: "rsu", ctx([view(0)]), task()) == (OffloadDecision.cdc(), False)


def test_register_offload_policy():
    @register_offload_policy("always-rsu-0-test")
    def pol(c, t):
        return OffloadDecision.rsu(0)

    try:
        assert decide(get_offload_policy("always-rsu-0-test"), ctx([view(0)]), task()) == (
            OffloadDecision.rsu(0), True)
    finally:
        del OFFLOAD_POLICIES["always-rsu-0-test"]
    with pytest.raises(KeyError):
        get_offload_policy("always-rsu-0-test")


def test_task_request_validation():
    with pytest.raises(ValueError):
        TaskRequest(0, 0, 0.0, 1.0, 1.0, 0)
