from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vedge import desk_scenario, run
from vedge.metrics import (EPS_GUARD, SUMMARY_COLUMNS, MetricsFrame, MetricsParams, avg_response_time,
                           dumps_records, frames_from_events, hit_rate, load_balancing, qos,
                           space_utilization, summary_row, write_summary_csv)
from vedge.worldmodel import CacheStore


def small(**over):
    sc = desk_scenario().with_updates(clock={"horizon": 300}, gen={"sdv_count": 40,
                                                                   "service_count": 2000})
    return sc.with_updates(**over) if over else sc


@pytest.fixture(scope="module")
def report():
    return run(small(), 4)


def test_hit_rate_basic():
    assert hit_rate(3, 4) == (0.75, True)
    assert hit_rate(0, 0) == (0.0, False)


def test_avg_response_time():
    assert avg_response_time([1.0, 2.0, 6.0]) == 3.0
    assert avg_response_time([]) is None


def test_qos_formula():
    # 10 MB over 5 s at 2 W
    assert qos(10.0, 5.0, 2.0) == pytest.approx(math.log(3.0) / 4.0)
    assert qos(10.0, 0.0, 2.0) is None
    with pytest.raises(ValueError):
        qos(1.0, 1.0, 0.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_load_balancing_oracle(loads):
    std, lb, degen = load_balancing(loads)
    assert std == pytest.approx(float(np.std(loads)), abs=1e-12)
    assert lb == pytest.approx(1.0 / (std + EPS_GUARD))
    assert degen == (std < 1e-12)


def test_identical_loads_are_flagged():
    std, lb, degen = load_balancing([0.3, 0.3, 0.3])
    assert std == 0.0 and lb == pytest.approx(1e9) and degen


def test_space_utilization():
    a, b = CacheStore(10), CacheStore(30)
    a.insert(1, 5, 0)
    b.insert(2, 15, 0)
    assert space_utilization([a, b]) == 50.0
    assert space_utilization([(1.0, 4.0)]) == 25.0
    with pytest.raises(ValueError):
        space_utilization([(0.0, 0.0)])


def test_frames_recompute_from_log(report):
    frames = frames_from_events(report.events, report.scenario.metrics)
    assert len(frames) == len(report.frames)
    for got, want in zip(frames, report.frames):
        for k in ("hit_rate", "peer_hit_rate", "issued", "completed", "failed", "in_flight",
                  "space_utilization"):
            assert getattr(got, k) == pytest.approx(getattr(want, k), rel=1e-12)
        for k in ("avg_response_time", "qos", "load_std"):
            a, b = getattr(got, k), getattr(want, k)
            assert (a is None and b is None) or a == pytest.approx(b, rel=1e-9)


def test_hit_rate_recount_oracle(report):
    cache = [e for e in report.events if e["type"] == "cache"]
    hits = sum(e["outcome"] == "hit" for e in cache)
    assert report.final.hit_rate == pytest.approx(hits / len(cache))
    fin = [e for e in report.events if e["type"] == "task" and e["status"] == "finished"
           and e["rsu"] is not None]
    assert report.final.avg_response_time == pytest.approx(
        math.fsum(e["latency"] for e in fin) / len(fin))


def test_sliding_window_frames():
    rep = run(small(metrics={"window_ticks": 100}), 2)
    anchors = [e for e in rep.events if e["type"] == "anchor"]
    last, prev = anchors[-1], anchors[-2]
    cache = [e for e in rep.events if e["type"] == "cache" and prev["tick"] <= e["tick"] < last["tick"]]
    hits = sum(e["outcome"] == "hit" for e in cache)
    assert rep.final.hit_rate == pytest.approx(hits / len(cache))
    assert frames_from_events(rep.events, rep.scenario.metrics)[-1].hit_rate == rep.final.hit_rate


def test_frame_record_roundtrip(report):
    f = report.final
    assert MetricsFrame.from_record(json.loads(json.dumps(f.to_record()))) == f


def test_dumps_records_is_sorted_ndjson():
    text = dumps_records([{"b": 1, "a": 2}, {"c": [1, 2]}])
    assert text == '{"a":2,"b":1}\n{"c":[1,2]}\n'


def test_summary_csv_shape(report):
    row = summary_row("lfu", 16e9, 3, report.final)
    text = write_summary_csv([row])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == SUMMARY_COLUMNS
    assert rows[0]["policy"] == "lfu" and rows[0]["cache_size_gb"] == "16"


def test_params_validation():
    with pytest.raises(ValueError):
        MetricsParams(anchor_every=0)
