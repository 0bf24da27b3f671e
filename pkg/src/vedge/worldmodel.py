"""Core entity records shared by every part of the simulator.

Coordinates are meters on a flat plane.  Entities are plain mutable
records; the engine is the only writer during a run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

__all__ = [
    "ServiceSpec",
    "SdvState",
    "RsuState",
    "CdcState",
    "Conn",
    "ConnKind",
    "ConnStatus",
    "CacheEntry",
    "CacheStore",
    "IllegalTransition",
    "TRANSITIONS",
    "distance",
    "in_range",
]


class IllegalTransition(RuntimeError):
    """Raised when a Conn is asked to move along an edge that does not exist."""


@dataclass
class ServiceSpec:
    id: int
    size_bytes: float
    charm: float
    cpu_demand: float
    feature: np.ndarray
    cluster_id: int
    timeout: float

    def __post_init__(self):
        if self.size_bytes <= 0 or self.cpu_demand <= 0 or self.charm <= 0:
            raise ValueError(f"service {self.id}: size, cpu demand and charm must be positive")
        if self.timeout <= 0:
            raise ValueError(f"service {self.id}: timeout must be positive")


# --------------------------------------------------------------------------
# cache bookkeeping
# --------------------------------------------------------------------------

@dataclass
class CacheEntry:
    size_bytes: float
    inserted_seq: int
    last_used: int
    last_seq: int
    freq: int = 1
    ref_bit: bool = False
    pins: int = 0


class CacheStore:
    """Byte-bounded service image store.

    Every entry carries the metadata needed by all baseline eviction
    policies (recency, frequency, insertion order, reference bit) so the
    active policy can be swapped without rebuilding the store.  ``ring`` and
    ``hand`` form the circular buffer used by CLOCK; new entries are placed
    directly behind the hand with their reference bit set.  ``requests``
    counts every lookup per service and survives eviction (LFU reads it).
    """

    def __init__(self, capacity_bytes: float):
        if capacity_bytes < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity_bytes = float(capacity_bytes)
        self.entries: dict[int, CacheEntry] = {}
        self.ring: list[int] = []
        self.hand = 0
        self.used_bytes = 0.0
        self.requests: dict[int, int] = {}
        self._seq = 0

    def __contains__(self, sid: int) -> bool:
        return sid in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[int]:
        return iter(self.entries)

    @property
    def free_bytes(self) -> float:
        return self.capacity_bytes - self.used_bytes

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def record_request(self, sid: int) -> None:
        self.requests[sid] = self.requests.get(sid, 0) + 1

    def touch(self, sid: int, tick: int) -> None:
        e = self.entries[sid]
        e.freq += 1
        e.last_used = tick
        e.last_seq = self.next_seq()
        e.ref_bit = True

    def insert(self, sid: int, size_bytes: float, tick: int) -> None:
        if sid in self.entries:
            raise KeyError(f"service {sid} already cached")
        if size_bytes > self.free_bytes + 1e-9:
            raise ValueError("insert would exceed capacity")
        seq = self.next_seq()
        self.entries[sid] = CacheEntry(size_bytes, seq, tick, seq, ref_bit=True)
        self.used_bytes += size_bytes
        self.ring.insert(self.hand, sid)
        self.hand = (self.hand + 1) % len(self.ring)

    def remove(self, sid: int) -> CacheEntry:
        e = self.entries.pop(sid)
        self.used_bytes -= e.size_bytes
        if not self.entries:
            self.used_bytes = 0.0
        i = self.ring.index(sid)
        self.ring.pop(i)
        if i < self.hand:
            self.hand -= 1
        if self.hand >= len(self.ring):
            self.hand = 0
        return e

    def evictable(self) -> list[int]:
        """Unpinned entries in insertion order."""
        ids = [sid for sid, e in self.entries.items() if e.pins == 0]
        ids.sort(key=lambda s: self.entries[s].inserted_seq)
        return ids

    def pin(self, sid: int) -> None:
        self.entries[sid].pins += 1

    def unpin(self, sid: int) -> None:
        e = self.entries.get(sid)
        if e is not None and e.pins > 0:
            e.pins -= 1


# --------------------------------------------------------------------------
# entities
# --------------------------------------------------------------------------

@dataclass
class SdvState:
    id: int
    position: tuple[float, float]
    velocity: float = 0.0
    acceleration: float = 0.0
    heading: float = 0.0
    compute_capacity: float = 10e9
    tx_power: float = 1.0
    cache: CacheStore = field(default_factory=lambda: CacheStore(0))
    preference: np.ndarray | None = None
    cluster_id: int = 0
    sleeping_until: int | None = None
    accessed_history: dict[int, int] = field(default_factory=dict)
    requests_since_sleep: int = 0

    @property
    def active(self) -> bool:
        return self.sleeping_until is None

    def is_sleeping(self, tick: int) -> bool:
        return self.sleeping_until is not None and tick < self.sleeping_until


@dataclass
class RsuState:
    id: int
    position: tuple[float, float]
    coverage_radius: float
    compute_capacity: float = 100e9
    tx_power: float = 10.0
    concurrency_limit: int = 8
    cache: CacheStore = field(default_factory=lambda: CacheStore(0))
    queue: list = field(default_factory=list)
    running_tasks: list = field(default_factory=list)
    alive: bool = True
    backhaul_up: bool = True

    def check_invariants(self) -> None:
        if len(self.running_tasks) > self.concurrency_limit:
            raise AssertionError(f"rsu {self.id}: {len(self.running_tasks)} running > limit")
        if self.queue and len(self.running_tasks) < self.concurrency_limit:
            raise AssertionError(f"rsu {self.id}: queued work while a slot is free")


@dataclass
class CdcState:
    disk: dict[int, ServiceSpec]
    compute_capacity: float = 10e12
    position: tuple[float, float] = (0.0, -300e3)
    active_tasks: int = 0

    def per_task_allocation(self, extra: int = 0) -> float:
        """Fraction of CDC capacity a task receives under fair sharing."""
        n = self.active_tasks + extra
        return 1.0 / n if n > 0 else 1.0


# --------------------------------------------------------------------------
# connections
# --------------------------------------------------------------------------

class ConnKind(str, Enum):
    V2R = "V2R"
    V2V = "V2V"
    R2C = "R2C"
    R2R = "R2R"


class ConnStatus(str, Enum):
    PENDING = "PENDING"
    ESTABLISHED = "ESTABLISHED"
    TRANSMITTING = "TRANSMITTING"
    COMPUTING = "COMPUTING"
    FINISHED = "FINISHED"
    FAILED = "FAILED"

    @property
    def terminal(self) -> bool:
        return self in (ConnStatus.FINISHED, ConnStatus.FAILED)


TRANSITIONS: dict[ConnStatus, frozenset[ConnStatus]] = {
    ConnStatus.PENDING: frozenset({ConnStatus.ESTABLISHED, ConnStatus.FAILED}),
    ConnStatus.ESTABLISHED: frozenset({ConnStatus.TRANSMITTING, ConnStatus.FAILED}),
    ConnStatus.TRANSMITTING: frozenset(
        {ConnStatus.COMPUTING, ConnStatus.FINISHED, ConnStatus.FAILED}),
    ConnStatus.COMPUTING: frozenset({ConnStatus.FINISHED, ConnStatus.FAILED}),
    ConnStatus.FINISHED: frozenset(),
    ConnStatus.FAILED: frozenset(),
}


@dataclass
class Conn:
    """Lifecycle record of one transfer between two entities.

    ``events`` holds completion descriptors (plain tuples) that the engine
    dispatches after the connection reaches a terminal state.  ``computes``
    marks connections whose payload is executed at the receiver, which sends
    them through COMPUTING instead of straight to FINISHED.
    """

    id: int
    kind: ConnKind
    endpoints: tuple
    total_bytes: float
    created_tick: int
    remaining_bytes: float = -1.0
    status: ConnStatus = ConnStatus.PENDING
    prop_remaining: float = 0.0
    computes: bool = False
    radio: int | None = None
    fading: float = 1.0
    deadline_tick: int | None = None
    failure: str | None = None
    extra_delay: float = 0.0
    events: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        if self.total_bytes < 0:
            raise ValueError("payload must be non-negative")
        if self.remaining_bytes < 0:
            self.remaining_bytes = float(self.total_bytes)

    def transition(self, new: ConnStatus) -> None:
        if new not in TRANSITIONS[self.status]:
            raise IllegalTransition(f"conn {self.id}: {self.status.value} -> {new.value}")
        self.status = new

    def fail(self, reason: str) -> None:
        if self.status.terminal:
            return
        self.transition(ConnStatus.FAILED)
        self.failure = reason

    def drain(self, nbytes: float) -> None:
        if nbytes < 0:
            raise ValueError("cannot drain a negative byte count")
        left = self.remaining_bytes - nbytes
        if left <= 1e-9 * max(self.total_bytes, 1.0):
            left = 0.0
        self.remaining_bytes = left


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

def _xy(p) -> tuple[float, float]:
    return p.position if hasattr(p, "position") else p


def distance(a, b) -> float:
    """Euclidean distance between two positioned entities (or bare points)."""
    ax, ay = _xy(a)
    bx, by = _xy(b)
    return math.hypot(ax - bx, ay - by)


def in_range(v, r) -> bool:
    """True when ``v`` lies strictly inside the coverage disc of ``r``."""
    return distance(v, r) < r.coverage_radius
