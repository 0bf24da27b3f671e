"""Service-image caching at RSUs: eviction policies, lookup/admission and the
request flow with inter-RSU collaboration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .channel import (ChannelParams, PathInfeasible, backhaul_pull_time, find_relay_path,
                      mesh_path_time, mutual_range, rtt_backhaul)
from .worldmodel import CacheStore

__all__ = [
    "CacheParams",
    "CachePolicy",
    "RandomPolicy",
    "FifoPolicy",
    "LruPolicy",
    "LfuPolicy",
    "ClockPolicy",
    "CACHE_POLICIES",
    "register_cache_policy",
    "make_cache_policy",
    "CacheEvent",
    "Resolution",
    "lookup",
    "admit",
    "deploy_time",
    "ready_time",
    "collaboration_peers",
    "resolve",
]

HIT, PEER, MISS = "hit", "peer", "miss"


class CacheParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    policy: str = "lru"
    rsu_capacity: float = Field(8e9, ge=0)
    sdv_policy: str = "lru"
    deploy_rate: float = Field(1e9, gt=0)
    collab_reach: int = Field(1, ge=0)


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

class CachePolicy:
    """Base eviction policy: admit every miss, pick victims one at a time."""

    name = "base"

    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng

    def should_admit(self, store: CacheStore, sid: int, size: float, tick: int) -> bool:
        return True

    def victim(self, store: CacheStore) -> int | None:
        raise NotImplementedError


class RandomPolicy(CachePolicy):
    name = "random"

    def __init__(self, rng=None):
        super().__init__(rng if rng is not None else np.random.default_rng(0))

    def victim(self, store):
        ids = store.evictable()
        if not ids:
            return None
        return ids[int(self.rng.integers(len(ids)))]


class FifoPolicy(CachePolicy):
    name = "fifo"

    def victim(self, store):
        ids = store.evictable()
        return ids[0] if ids else None


class LruPolicy(CachePolicy):
    name = "lru"

    def victim(self, store):
        best = None
        for sid, e in store.entries.items():
            if e.pins == 0 and (best is None or e.last_seq < store.entries[best].last_seq):
                best = sid
        return best


class LfuPolicy(CachePolicy):
    """Evict the least requested service; ties go to the older insertion.

    Counts are the store's request history, which outlives evictions, so a
    returning popular image is not judged on its fresh in-cache count.
    """

    name = "lfu"

    def victim(self, store):
        best, key = None, None
        for sid, e in store.entries.items():
            if e.pins:
                continue
            k = (store.requests.get(sid, 0), e.inserted_seq)
            if key is None or k < key:
                best, key = sid, k
        return best


class ClockPolicy(CachePolicy):
    """Second-chance scan over the store's ring, clearing reference bits."""

    name = "clock"

    def victim(self, store):
        ring = store.ring
        if not ring:
            return None
        for _ in range(2 * len(ring) + 1):
            sid = ring[store.hand]
            e = store.entries[sid]
            if e.pins:
                store.hand = (store.hand + 1) % len(ring)
            elif e.ref_bit:
                e.ref_bit = False
                store.hand = (store.hand + 1) % len(ring)
            else:
                return sid
        return None


CACHE_POLICIES: dict[str, type[CachePolicy]] = {
    p.name: p for p in (RandomPolicy, FifoPolicy, LruPolicy, LfuPolicy, ClockPolicy)
}


def register_cache_policy(cls):
    """Class decorator adding a user-defined policy under ``cls.name``."""
    CACHE_POLICIES[cls.name] = cls
    return cls


def make_cache_policy(name: str, rng: np.random.Generator | None = None) -> CachePolicy:
    try:
        cls = CACHE_POLICIES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown cache policy {name!r}; known: {sorted(CACHE_POLICIES)}") from None
    return cls(rng)


# --------------------------------------------------------------------------
# store operations
# --------------------------------------------------------------------------

def lookup(store: CacheStore, sid: int, tick: int) -> bool:
    """Hit test; a hit refreshes recency, frequency and the reference bit."""
    store.record_request(sid)
    if sid in store.entries:
        store.touch(sid, tick)
        return True
    return False


def admit(policy: CachePolicy, store: CacheStore, sid: int, size: float,
          tick: int) -> tuple[bool, list[int]]:
    """Insert ``sid`` after evicting per ``policy`` until it fits.

    Nothing is evicted when the image can never fit (larger than capacity,
    or larger than free space plus every unpinned entry).
    """
    if sid in store.entries:
        return False, []
    if size > store.capacity_bytes or not policy.should_admit(store, sid, size, tick):
        return False, []
    reclaimable = store.free_bytes + sum(e.size_bytes for e in store.entries.values() if not e.pins)
    if size > reclaimable + 1e-9:
        return False, []
    evicted = []
    while store.free_bytes + 1e-9 < size:
        v = policy.victim(store)
        if v is None:  # pragma: no cover - guarded by the reclaimable check
            break
        store.remove(v)
        evicted.append(v)
    store.insert(sid, size, tick)
    return True, evicted


# --------------------------------------------------------------------------
# request flow
# --------------------------------------------------------------------------

@dataclass
class CacheEvent:
    tick: int
    rsu_id: int
    service_id: int
    outcome: str
    source: int | None
    bytes_moved: float
    admitted: bool = False
    evicted: tuple = ()

    def to_record(self) -> dict:
        return {"type": "cache", "tick": self.tick, "rsu": self.rsu_id,
                "service": self.service_id, "outcome": self.outcome, "source": self.source,
                "bytes": self.bytes_moved, "admitted": self.admitted,
                "evicted": list(self.evicted)}


@dataclass
class Resolution:
    outcome: str
    source: int | None
    path: list = field(default_factory=list)
    fetch_time: float = 0.0
    branches: dict = field(default_factory=dict)
    event: CacheEvent | None = None


def deploy_time(size: float, deploy_rate: float) -> float:
    return size / deploy_rate


def ready_time(rtt: float, cached: bool, bracket: float, t_deploy: float) -> float:
    """RTT + (1 - gamma) * transfer bracket + deployment."""
    return rtt + (0.0 if cached else bracket) + t_deploy


def collaboration_peers(target, sid: int, size: float, rsus, params: ChannelParams,
                        reach: int = 1, fading=None):
    """Peers holding ``sid`` that can ship it to ``target``.

    Returns ``[(peer, path, seconds)]`` ordered by estimated transfer time,
    then peer id.  ``reach`` is the maximum number of relay hops.  ``fading``
    optionally maps ``(a_id, b_id)`` hop pairs to power gains.
    """
    out = []
    if reach < 1:
        return out
    for peer in rsus:
        if peer.id == target.id or not getattr(peer, "alive", True) or sid not in peer.cache:
            continue
        if reach == 1:
            if not mutual_range(peer, target):
                continue
            path = [(peer, target)]
        else:
            path = find_relay_path(peer, target, rsus)
            if path is None or len(path) > reach:
                continue
        gains = None if fading is None else [fading.get((a.id, b.id), 1.0) for a, b in path]
        try:
            t = mesh_path_time(path, size, params, gains)
        except PathInfeasible:  # pragma: no cover - paths come from range checks
            continue
        out.append((peer, path, t))
    out.sort(key=lambda x: (x[2], x[0].id))
    return out


def resolve(target, sid: int, size: float, rsus, cdc, params: ChannelParams, tick: int,
            policy: CachePolicy | None = None, *, deploy_rate: float = 1e9,
            reach: int = 1, fading=None) -> Resolution:
    """Find where ``target`` gets the image of ``sid`` and what it costs.

    Local hit: RTT + deployment.  Otherwise the fastest collaborating peer is
    used when its transfer beats a pull from the CDC; else the CDC serves it.
    With ``policy`` given, a miss is admitted into the target's store.
    """
    rtt = rtt_backhaul(target, cdc, params)
    t_dep = deploy_time(size, deploy_rate)
    cdc_bracket = backhaul_pull_time(size, target, cdc, params)
    branches = {"cached": ready_time(rtt, True, 0.0, t_dep),
                "cdc": ready_time(rtt, False, cdc_bracket, t_dep)}
    if lookup(target.cache, sid, tick):
        ev = CacheEvent(tick, target.id, sid, HIT, target.id, 0.0)
        return Resolution(HIT, target.id, [], branches["cached"], branches, ev)
    peers = collaboration_peers(target, sid, size, rsus, params, reach, fading)
    if peers and peers[0][2] <= cdc_bracket:
        peer, path, t = peers[0]
        branches["peer"] = ready_time(rtt, False, t, t_dep)
        res = Resolution(PEER, peer.id, path, branches["peer"], branches,
                         CacheEvent(tick, target.id, sid, PEER, peer.id, size))
    else:
        res = Resolution(MISS, None, [], branches["cdc"], branches,
                         CacheEvent(tick, target.id, sid, MISS, None, size))
    if policy is not None:
        ok, ev = admit(policy, target.cache, sid, size, tick)
        res.event.admitted = ok
        res.event.evicted = tuple(ev)
    return res
