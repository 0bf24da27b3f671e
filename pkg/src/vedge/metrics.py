"""Built-in performance metrics and report export.

Every frame can be rebuilt from the event log alone (:func:`frame_from_events`);
the engine keeps an incremental :class:`MetricsAccumulator` for live frames.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

__all__ = [
    "MetricsParams",
    "RsuMetrics",
    "MetricsFrame",
    "EPS_GUARD",
    "hit_rate",
    "avg_response_time",
    "qos",
    "load_balancing",
    "space_utilization",
    "MetricsAccumulator",
    "frame_from_events",
    "frames_from_events",
    "dumps_records",
    "summary_row",
    "SUMMARY_COLUMNS",
    "write_summary_csv",
]

EPS_GUARD = 1e-9


class MetricsParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    anchor_every: int = Field(100, ge=1)
    window_ticks: int | None = Field(None, ge=1)
    qos_rate_unit: float = Field(1e6, gt=0)  # bytes per rate unit (MB/s by default)


@dataclass(frozen=True)
class RsuMetrics:
    id: int
    requests: int
    hits: int
    peer_hits: int
    misses: int
    hit_rate: float
    hit_rate_defined: bool
    peer_hit_rate: float
    completed: int
    avg_response_time: float | None
    qos: float | None
    avg_load: float
    power: float


@dataclass(frozen=True)
class MetricsFrame:
    tick: int
    rsus: tuple
    hit_rate: float
    peer_hit_rate: float
    avg_response_time: float | None
    qos: float | None
    load_std: float
    load_balancing: float
    load_degenerate: bool
    issued: int
    completed: int
    failed: int
    in_flight: int
    space_utilization: float

    def to_record(self) -> dict:
        d = asdict(self)
        d["rsus"] = [asdict(r) for r in self.rsus]
        return d

    @classmethod
    def from_record(cls, d: dict) -> "MetricsFrame":
        d = dict(d)
        d["rsus"] = tuple(RsuMetrics(**r) for r in d["rsus"])
        return cls(**d)


# --------------------------------------------------------------------------
# formulas
# --------------------------------------------------------------------------

def hit_rate(hits: int, requests: int) -> tuple[float, bool]:
    """Local hits over requests routed to the RSU; ``(0, False)`` when empty."""
    if requests == 0:
        return 0.0, False
    return hits / requests, True


def avg_response_time(latencies) -> float | None:
    lat = list(latencies)
    return math.fsum(lat) / len(lat) if lat else None


def qos(total_size: float, total_time: float, power: float) -> float | None:
    """ln(1 + total_size / total_time) / power**2.

    ``total_size`` must already be in the chosen rate unit.  None when no
    time has accrued.
    """
    if power <= 0:
        raise ValueError("power statistic must be positive")
    if total_time <= 0:
        return None
    return math.log1p(total_size / total_time) / power ** 2


def load_balancing(loads) -> tuple[float, float, bool]:
    """Population std of per-RSU load and its guarded inverse.

    Returns ``(std, 1 / (std + EPS_GUARD), degenerate)``; ``degenerate`` flags
    identical loads, where the inverse is just the guard cap.
    """
    w = np.asarray(list(loads), dtype=float)
    if w.size == 0:
        raise ValueError("need at least one RSU")
    std = float(np.sqrt(np.mean((w - w.mean()) ** 2)))
    return std, 1.0 / (std + EPS_GUARD), std < 1e-12


def space_utilization(caches) -> float:
    """Occupied over total capacity, in percent.

    Accepts stores (``used_bytes`` / ``capacity_bytes``) or ``(used, cap)`` pairs.
    """
    used = cap = 0.0
    for c in caches:
        if isinstance(c, tuple):
            u, k = c
        else:
            u, k = c.used_bytes, c.capacity_bytes
        used += u
        cap += k
    if cap <= 0:
        raise ValueError("total capacity must be positive")
    return 100.0 * used / cap


def _power(energy: float, radio_s: float, tx_power: float) -> float:
    return energy / radio_s if radio_s > 0 else tx_power


def _build_frame(tick, per_rsu, loads_time, issued, completed, failed, in_flight,
                 used_cap, unit) -> MetricsFrame:
    rows = []
    tot = dict(req=0, hit=0, peer=0, n=0, lat=0.0, size=0.0)
    powers = []
    for rid in sorted(per_rsu):
        s = per_rsu[rid]
        hr, ok = hit_rate(s["hit"], s["req"])
        p = _power(s["energy"], s["radio"], s["tx_power"])
        powers.append(p)
        rows.append(RsuMetrics(
            id=rid, requests=s["req"], hits=s["hit"], peer_hits=s["peer"], misses=s["miss"],
            hit_rate=hr, hit_rate_defined=ok,
            peer_hit_rate=s["peer"] / s["req"] if s["req"] else 0.0,
            completed=s["n"], avg_response_time=s["lat"] / s["n"] if s["n"] else None,
            qos=qos(s["size"] / unit, s["lat"], p) if s["n"] else None,
            avg_load=s["busy"] / loads_time if loads_time > 0 else 0.0,
            power=p))
        for k_src, k_dst in (("req", "req"), ("hit", "hit"), ("peer", "peer"), ("n", "n"),
                             ("lat", "lat"), ("size", "size")):
            tot[k_dst] += s[k_src]
    std, lb, degen = load_balancing([r.avg_load for r in rows]) if rows else (0.0, 1 / EPS_GUARD, True)
    p_mean = float(np.mean(powers)) if powers else 1.0
    return MetricsFrame(
        tick=tick, rsus=tuple(rows),
        hit_rate=tot["hit"] / tot["req"] if tot["req"] else 0.0,
        peer_hit_rate=tot["peer"] / tot["req"] if tot["req"] else 0.0,
        avg_response_time=tot["lat"] / tot["n"] if tot["n"] else None,
        qos=qos(tot["size"] / unit, tot["lat"], p_mean) if tot["n"] else None,
        load_std=std, load_balancing=lb, load_degenerate=degen,
        issued=issued, completed=completed, failed=failed, in_flight=in_flight,
        space_utilization=space_utilization(used_cap) if sum(c for _, c in used_cap) > 0 else 0.0)


def _blank(tx_power):
    return dict(req=0, hit=0, peer=0, miss=0, n=0, lat=0.0, size=0.0,
                busy=0.0, radio=0.0, energy=0.0, tx_power=tx_power)


class MetricsAccumulator:
    """Running totals fed by the engine as records are emitted."""

    def __init__(self, rsu_ids, tx_powers, params: MetricsParams):
        self.params = params
        self.s = {rid: _blank(p) for rid, p in zip(rsu_ids, tx_powers)}
        self.issued = self.completed = self.failed = 0

    def on_cache(self, rsu: int, outcome: str) -> None:
        s = self.s[rsu]
        s["req"] += 1
        s["hit" if outcome == "hit" else "peer" if outcome == "peer" else "miss"] += 1

    def on_issue(self) -> None:
        self.issued += 1

    def on_task(self, rec: dict) -> None:
        if rec["status"] == "finished":
            self.completed += 1
            rid = rec["rsu"]
            if rid is not None:
                s = self.s[rid]
                s["n"] += 1
                s["lat"] += rec["latency"]
                s["size"] += rec["size"]
        else:
            self.failed += 1

    def frame(self, tick: int, dt: float, busy, radio, energy, used_cap) -> MetricsFrame:
        for rid, s in self.s.items():
            s["busy"], s["radio"], s["energy"] = busy[rid], radio[rid], energy[rid]
        return _build_frame(tick, self.s, tick * dt, self.issued, self.completed, self.failed,
                            self.issued - self.completed - self.failed, used_cap,
                            self.params.qos_rate_unit)


def frame_from_events(events, anchor: dict, params: MetricsParams,
                      start_anchor: dict | None = None) -> MetricsFrame:
    """Recompute a frame from raw records.

    ``anchor`` is the anchor record closing the window; ``start_anchor`` (for
    sliding windows) the one opening it.  Records with ``start <= tick < end``
    are counted.
    """
    end = anchor["tick"]
    start = start_anchor["tick"] if start_anchor else 0
    per = {r["id"]: _blank(r["tx_power"]) for r in anchor["rsus"]}
    issued = completed = failed = 0
    for e in events:
        t = e["tick"]
        if not (start <= t < end):
            continue
        kind = e["type"]
        if kind == "cache":
            s = per[e["rsu"]]
            s["req"] += 1
            s[{"hit": "hit", "peer": "peer"}.get(e["outcome"], "miss")] += 1
        elif kind == "issue":
            issued += 1
        elif kind == "task":
            if e["status"] == "finished":
                completed += 1
                if e["rsu"] is not None:
                    s = per[e["rsu"]]
                    s["n"] += 1
                    s["lat"] += e["latency"]
                    s["size"] += e["size"]
            else:
                failed += 1
    base = {r["id"]: r for r in start_anchor["rsus"]} if start_anchor else {}
    for r in anchor["rsus"]:
        b = base.get(r["id"], {"busy": 0.0, "radio": 0.0, "energy": 0.0})
        s = per[r["id"]]
        s["busy"] = r["busy"] - b["busy"]
        s["radio"] = r["radio"] - b["radio"]
        s["energy"] = r["energy"] - b["energy"]
    span = anchor["time"] - (start_anchor["time"] if start_anchor else 0.0)
    if start_anchor is None:
        in_flight = issued - completed - failed
    else:
        in_flight = anchor["in_flight"]
    used_cap = [(r["used"], r["capacity"]) for r in anchor["rsus"]]
    return _build_frame(end, per, span, issued, completed, failed, in_flight, used_cap,
                        params.qos_rate_unit)


def frames_from_events(events, params: MetricsParams) -> list[MetricsFrame]:
    """All anchor frames of a run, cumulative or sliding per ``params``."""
    events = list(events)
    anchors = [e for e in events if e["type"] == "anchor"]
    out = []
    for i, a in enumerate(anchors):
        start = None
        if params.window_ticks is not None:
            lo = a["tick"] - params.window_ticks
            prior = [b for b in anchors[:i] if b["tick"] <= lo]
            start = prior[-1] if prior and prior[-1]["tick"] > 0 else None
        out.append(frame_from_events(events, a, params, start))
    return out


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def dumps_records(records) -> str:
    """Newline-delimited JSON with sorted keys (stable byte output)."""
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


SUMMARY_COLUMNS = ["policy", "cache_size_gb", "seed", "hit_rate_pct", "avg_response_time_s",
                   "qos", "space_utilization_pct"]


def summary_row(policy: str, cache_bytes: float, seed: int, frame: MetricsFrame) -> dict:
    return {
        "policy": policy,
        "cache_size_gb": f"{cache_bytes / 1e9:g}",
        "seed": seed,
        "hit_rate_pct": f"{100 * frame.hit_rate:.4f}",
        "avg_response_time_s": "" if frame.avg_response_time is None else f"{frame.avg_response_time:.4f}",
        "qos": "" if frame.qos is None else f"{frame.qos:.4f}",
        "space_utilization_pct": f"{frame.space_utilization:.4f}",
    }


def write_summary_csv(rows, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue() if fh is None else ""
