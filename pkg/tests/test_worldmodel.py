from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vedge.worldmodel import (TRANSITIONS, CacheStore, CdcState, Conn, ConnKind, ConnStatus,
                              IllegalTransition, RsuState, SdvState, ServiceSpec, distance,
                              in_range)

S = ConnStatus

# the lifecycle written out independently of TRANSITIONS
LEGAL = {
    (S.PENDING, S.ESTABLISHED), (S.PENDING, S.FAILED),
    (S.ESTABLISHED, S.TRANSMITTING), (S.ESTABLISHED, S.FAILED),
    (S.TRANSMITTING, S.COMPUTING), (S.TRANSMITTING, S.FINISHED), (S.TRANSMITTING, S.FAILED),
    (S.COMPUTING, S.FINISHED), (S.COMPUTING, S.FAILED),
}


def test_transition_table_matches_lifecycle():
    table = {(a, b) for a, nxt in TRANSITIONS.items() for b in nxt}
    assert table == LEGAL


def fuzz(n_seq, seed):
    """Random transition attempts; returns the number of illegal moves that slipped through."""
    rng = np.random.default_rng(seed)
    states = list(S)
    slipped = 0
    for i in range(n_seq):
        c = Conn(i, ConnKind.V2R, (0, 1), 10.0, 0)
        for _ in range(int(rng.integers(1, 8))):
            target = states[int(rng.integers(len(states)))]
            before = c.status
            try:
                c.transition(target)
            except IllegalTransition:
                if (before, target) in LEGAL or c.status is not before:
                    slipped += 1
            else:
                if (before, target) not in LEGAL:
                    slipped += 1
    return slipped


def test_conn_fuzz_small():
    assert fuzz(2000, 1) == 0


def test_fail_is_idempotent_on_terminal():
    c = Conn(0, ConnKind.R2C, (0, 1), 0.0, 0)
    c.fail("range")
    c.fail("timeout")
    assert c.status is S.FAILED and c.failure == "range"
    assert c.status.terminal


def test_drain_tick_count():
    # 10 Mbit at 10 Mbit/s is one second, i.e. ten ticks of 0.1 s
    c = Conn(0, ConnKind.V2R, (0, 1), 10e6 / 8, 0)
    ticks = 0
    while c.remaining_bytes > 0:
        c.drain(10e6 / 8 * 0.1)
        ticks += 1
    assert ticks == 10


@given(st.floats(0, 1e9), st.lists(st.floats(0, 1e8), max_size=20))
def test_drain_never_negative(total, chunks):
    c = Conn(0, ConnKind.V2R, (0, 1), total, 0)
    for x in chunks:
        c.drain(x)
        assert 0.0 <= c.remaining_bytes <= total
    with pytest.raises(ValueError):
        c.drain(-1.0)


def test_negative_payload_rejected():
    with pytest.raises(ValueError):
        Conn(0, ConnKind.V2R, (0, 1), -1.0, 0)


def test_service_spec_validation():
    with pytest.raises(ValueError):
        ServiceSpec(0, 0.0, 1.0, 1.0, np.zeros(2), 0, 1.0)
    with pytest.raises(ValueError):
        ServiceSpec(0, 1.0, 1.0, 1.0, np.zeros(2), 0, 0.0)


def test_geometry():
    r = RsuState(0, (0.0, 0.0), 5.0)
    assert distance((0, 0), (3, 4)) == 5.0
    assert in_range(SdvState(0, (3.0, 3.9)), r)
    assert not in_range(SdvState(0, (3.0, 4.0)), r)  # boundary is outside


def test_store_ring_and_hand_stay_consistent():
    s = CacheStore(10)
    for sid in range(5):
        s.insert(sid, 2, sid)
    with pytest.raises(ValueError):
        s.insert(9, 1, 9)
    with pytest.raises(KeyError):
        s.insert(0, 0.1, 9)
    s.remove(2)
    s.remove(4)
    assert sorted(s.ring) == sorted(s.entries) == [0, 1, 3]
    assert 0 <= s.hand < len(s.ring)
    assert s.used_bytes == 6


def test_request_counts_survive_removal():
    s = CacheStore(10)
    s.record_request(1)
    s.insert(1, 1, 0)
    s.remove(1)
    s.record_request(1)
    assert s.requests[1] == 2


def test_rsu_invariants():
    r = RsuState(0, (0, 0), 10, concurrency_limit=1)
    r.running_tasks = [1]
    r.queue = [2]
    r.check_invariants()
    r.running_tasks = []
    with pytest.raises(AssertionError):
        r.check_invariants()


def test_cdc_fair_share():
    c = CdcState(disk={})
    assert c.per_task_allocation() == 1.0
    c.active_tasks = 3
    assert c.per_task_allocation(1) == 0.25


def test_sleep_state():
    v = SdvState(0, (0, 0))
    assert v.active and not v.is_sleeping(5)
    v.sleeping_until = 10
    assert v.is_sleeping(9) and not v.is_sleeping(10)
