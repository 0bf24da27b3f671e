"""Three-tier computation model and the offloading-policy plug-in surface.

Policies are plain callables ``policy(ctx, task) -> OffloadDecision`` and are
registered by name with :func:`register_offload_policy`.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .channel import ChannelParams, rtt_backhaul

log = logging.getLogger(__name__)

__all__ = [
    "Infeasible",
    "Tier",
    "TaskRequest",
    "OffloadDecision",
    "ComputeJob",
    "RsuView",
    "SdvView",
    "CdcView",
    "PolicyContext",
    "time_local",
    "queue_time",
    "rsu_terms",
    "time_rsu",
    "cdc_terms",
    "time_cdc",
    "tier_total",
    "total_task_time",
    "decide",
    "validate_decision",
    "OFFLOAD_POLICIES",
    "register_offload_policy",
    "get_offload_policy",
]


class Infeasible(ValueError):
    """The requested execution tier cannot serve this task."""


class Tier(str, Enum):
    LOCAL = "local"
    RSU = "rsu"
    CDC = "cdc"


@dataclass(frozen=True)
class TaskRequest:
    origin_sdv: int
    service_id: int
    cpu: float          # FLOP
    size: float         # bytes
    timeout: float      # seconds
    issue_tick: int

    def __post_init__(self):
        if self.cpu <= 0 or self.size <= 0 or self.timeout <= 0:
            raise ValueError("task cpu, size and timeout must be positive")


@dataclass(frozen=True)
class OffloadDecision:
    tier: Tier
    rsu_id: int | None = None

    @classmethod
    def local(cls):
        return cls(Tier.LOCAL)

    @classmethod
    def rsu(cls, rsu_id: int):
        return cls(Tier.RSU, rsu_id)

    @classmethod
    def cdc(cls):
        return cls(Tier.CDC)

    @property
    def alpha(self) -> int:
        return int(self.tier is Tier.LOCAL)

    @property
    def beta(self) -> int:
        return int(self.tier is Tier.RSU)


@dataclass
class ComputeJob:
    task_id: int
    flops_total: float
    flops_left: float


# --------------------------------------------------------------------------
# read-only views handed to policies
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RsuView:
    id: int
    position: tuple[float, float]
    coverage_radius: float
    compute_capacity: float
    concurrency_limit: int
    tx_power: float
    running_tasks: tuple
    queue: tuple
    n_transmitting: int
    cached: frozenset
    cache_free: float
    alive: bool
    backhaul_up: bool
    distance: float
    in_range: bool
    reachable: bool
    est_rate: float
    rtt: float
    load: float


@dataclass(frozen=True)
class SdvView:
    id: int
    position: tuple[float, float]
    compute_capacity: float
    tx_power: float
    cache_capacity: float
    cache_free: float
    cached: frozenset
    hop: int | None


@dataclass(frozen=True)
class CdcView:
    compute_capacity: float
    active_tasks: int
    position: tuple[float, float]


@dataclass(frozen=True)
class PolicyContext:
    tick: int
    dt: float
    sdv: SdvView
    rsus: tuple
    cdc: CdcView
    channel: ChannelParams = field(default_factory=ChannelParams)

    def rsu(self, rsu_id: int) -> RsuView:
        return self.rsus[rsu_id]

    @property
    def hop(self) -> RsuView | None:
        return None if self.sdv.hop is None else self.rsus[self.sdv.hop]


# --------------------------------------------------------------------------
# timing terms
# --------------------------------------------------------------------------

def time_local(task: TaskRequest, v) -> float:
    """Seconds to run the task on the vehicle itself (workload / local FLOPS)."""
    cap = getattr(v, "cache_capacity", None)
    if cap is None:
        cap = v.cache.capacity_bytes
    if task.size > cap:
        raise Infeasible(f"vehicle {v.id} cannot store a {task.size:.3g} B image")
    return task.cpu / v.compute_capacity


def queue_time(r) -> float:
    """Wait before a newly submitted job on ``r`` gets a compute slot.

    Zero while fewer than ``concurrency_limit`` jobs run.  Otherwise the
    running jobs' residual times seed one clock per slot and queued jobs are
    assigned FIFO to the earliest free slot; the new arrival waits for the
    earliest slot left after that.  With one slot this is the plain sum of the
    residual and queued durations.
    """
    running = r.running_tasks
    if len(running) < r.concurrency_limit:
        return 0.0
    f = r.compute_capacity
    slots = sorted(j.flops_left / f for j in running)
    heapq.heapify(slots)
    for job in r.queue:
        t = heapq.heappop(slots)
        heapq.heappush(slots, t + job.flops_total / f)
    return slots[0]


def rsu_terms(task: TaskRequest, r, upload_rate: float, relay_time: float = 0.0) -> dict:
    trans = (8.0 * task.size / upload_rate if math.isfinite(upload_rate) else 0.0) + relay_time
    return {"trans": trans, "queue": queue_time(r), "compute": task.cpu / r.compute_capacity}


def time_rsu(task: TaskRequest, r, upload_rate: float, relay_time: float = 0.0) -> float:
    """Upload + queueing + processing time for running the task on ``r``."""
    t = rsu_terms(task, r, upload_rate, relay_time)
    return t["trans"] + t["queue"] + t["compute"]


def cdc_terms(task: TaskRequest, cdc, via, upload_rate: float, params: ChannelParams,
              share: float | None = None) -> dict:
    if not getattr(via, "backhaul_up", True) or not getattr(via, "alive", True):
        raise Infeasible(f"rsu {via.id} has no live backhaul")
    if share is None:
        share = 1.0 / (cdc.active_tasks + 1)
    alloc = share * cdc.compute_capacity
    return {
        "trans": 8.0 * task.size / upload_rate if math.isfinite(upload_rate) else 0.0,
        "compute": task.cpu / alloc if math.isfinite(alloc) else 0.0,
        "rtt": rtt_backhaul(via, cdc, params),
    }


def time_cdc(task: TaskRequest, cdc, via, upload_rate: float, params: ChannelParams,
             share: float | None = None) -> float:
    """Upload to ``via`` + CDC processing at its allocated share + backhaul RTT."""
    t = cdc_terms(task, cdc, via, upload_rate, params, share)
    return t["trans"] + t["compute"] + t["rtt"]


def tier_total(alpha: int, beta: int, t_local: float, t_rsu: float, t_cdc: float) -> float:
    return alpha * t_local + (1 - alpha) * (beta * t_rsu + (1 - beta) * t_cdc)


def total_task_time(decision: OffloadDecision, terms: dict) -> float:
    """Overall completion time for ``decision``.

    ``terms`` holds the breakdown of the chosen tier as produced by
    :func:`rsu_terms` / :func:`cdc_terms`, or ``{"compute": ...}`` for local.
    Unselected tiers contribute nothing, so only the chosen breakdown is needed.
    """
    total = sum(terms.values())
    a, b = decision.alpha, decision.beta
    return tier_total(a, b, total if a else 0.0,
                     total if (not a and b) else 0.0,
                     total if (not a and not b) else 0.0)


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

Policy = Callable[[PolicyContext, TaskRequest], OffloadDecision]
OFFLOAD_POLICIES: dict[str, Policy] = {}


def register_offload_policy(name: str):
    def deco(fn):
        OFFLOAD_POLICIES[name] = fn
        return fn
    return deco


def get_offload_policy(name: str) -> Policy:
    try:
        return OFFLOAD_POLICIES[name]
    except KeyError:
        raise KeyError(f"unknown offload policy {name!r}; known: {sorted(OFFLOAD_POLICIES)}") from None


def _local_feasible(ctx: PolicyContext, task: TaskRequest) -> bool:
    return task.size <= ctx.sdv.cache_capacity


def validate_decision(decision: OffloadDecision, ctx: PolicyContext,
                      task: TaskRequest) -> tuple[OffloadDecision, bool]:
    """Return ``(decision, ok)``; infeasible choices fall back to the CDC."""
    if decision.tier is Tier.LOCAL and not _local_feasible(ctx, task):
        return OffloadDecision.cdc(), False
    if decision.tier is Tier.RSU:
        rid = decision.rsu_id
        if rid is None or not 0 <= rid < len(ctx.rsus) or not ctx.rsus[rid].reachable:
            return OffloadDecision.cdc(), False
    return decision, True


def decide(policy: Policy, ctx: PolicyContext, task: TaskRequest) -> tuple[OffloadDecision, bool]:
    """Run ``policy`` and validate its answer.

    Returns the decision to execute and whether the policy's own answer was
    used unchanged.  Exceptions inside the policy are logged and replaced by
    the CDC fallback.
    """
    try:
        d = policy(ctx, task)
    except Exception:  # user code
        log.exception("offload policy raised; falling back to CDC")
        return OffloadDecision.cdc(), False
    if not isinstance(d, OffloadDecision):
        log.warning("offload policy returned %r; falling back to CDC", d)
        return OffloadDecision.cdc(), False
    return validate_decision(d, ctx, task)


@register_offload_policy("always-local")
def always_local(ctx, task):
    return OffloadDecision.local()


@register_offload_policy("always-cdc")
def always_cdc(ctx, task):
    return OffloadDecision.cdc()


@register_offload_policy("nearest-rsu")
def nearest_rsu(ctx, task):
    """The access RSU (best link) when there is one, else local, else CDC."""
    if ctx.sdv.hop is not None:
        return OffloadDecision.rsu(ctx.sdv.hop)
    if _local_feasible(ctx, task):
        return OffloadDecision.local()
    return OffloadDecision.cdc()


@register_offload_policy("nearest-feasible-least-loaded")
def least_time(ctx, task):
    """Pick the tier with the smallest estimated completion time.

    RSU candidates are the in-range live RSUs; ties prefer an RSU (lowest
    id), then local execution, then the CDC.
    """
    best = None
    for r in ctx.rsus:
        if not (r.in_range and r.alive):
            continue
        t = time_rsu(task, r, r.est_rate)
        key = (t, 0, r.id)
        if best is None or key < best[0]:
            best = (key, OffloadDecision.rsu(r.id))
    if _local_feasible(ctx, task):
        key = (time_local(task, ctx.sdv), 1, 0)
        if best is None or key < best[0]:
            best = (key, OffloadDecision.local())
    hop = ctx.hop
    if hop is not None and hop.backhaul_up:
        key = (time_cdc(task, ctx.cdc, hop, hop.est_rate, ctx.channel), 2, 0)
        if best is None or key < best[0]:
            best = (key, OffloadDecision.cdc())
    return best[1] if best is not None else OffloadDecision.cdc()
