"""Independent re-derivations used by several test files."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from vedge.channel import ChannelParams
from vedge.offload import ComputeJob, OffloadDecision, TaskRequest, Tier
from vedge.worldmodel import CdcState, RsuState, SdvState


def queue_wait_by_events(residuals, queued, limit):
    """Wait of a new arrival, by stepping completion events one at a time.

    ``residuals`` are running jobs' remaining seconds, ``queued`` the
    durations of waiting jobs in FIFO order.
    """
    running = list(residuals)
    waiting = list(queued)
    now = 0.0
    while True:
        if len(running) < limit:
            if not waiting:
                return now
            running.append(now + waiting.pop(0))
            continue
        running.sort()
        now = running.pop(0)


def random_snapshot(rng: np.random.Generator):
    """One (task, vehicle, rsu, cdc, channel, decision, extras) tuple."""
    ch = ChannelParams(attenuation=float(rng.uniform(0.3, 1.0)))
    f = float(rng.uniform(1e9, 1e12))
    limit = int(rng.integers(1, 5))
    n_run = int(rng.integers(0, limit + 1))
    running = [ComputeJob(i, float(rng.uniform(1e8, 1e12)), 0.0) for i in range(n_run)]
    for j in running:
        j.flops_left = float(rng.uniform(0, j.flops_total))
    queue = [ComputeJob(100 + i, float(rng.uniform(1e8, 1e12)), 0.0)
             for i in range(int(rng.integers(0, 4)) if n_run == limit else 0)]
    for j in queue:
        j.flops_left = j.flops_total
    r = RsuState(0, tuple(rng.uniform(0, 5000, 2)), 2000.0, compute_capacity=f,
                 concurrency_limit=limit, running_tasks=running, queue=queue)
    cdc = CdcState(disk={}, compute_capacity=float(rng.uniform(1e12, 1e14)),
                   position=(0.0, -float(rng.uniform(1e3, 1e6))),
                   active_tasks=int(rng.integers(0, 20)))
    v = SdvState(1, (0.0, 0.0), compute_capacity=float(rng.uniform(1e9, 1e11)))
    v.cache.capacity_bytes = 1e12
    task = TaskRequest(1, 7, float(rng.uniform(1e8, 1e13)), float(rng.uniform(1e4, 1e9)),
                       30.0, 0)
    rate = float(rng.uniform(1e6, 1e10))
    relay = float(rng.uniform(0, 0.5)) if rng.random() < 0.5 else 0.0
    tier = [Tier.LOCAL, Tier.RSU, Tier.CDC][int(rng.integers(3))]
    d = {Tier.LOCAL: OffloadDecision.local(), Tier.RSU: OffloadDecision.rsu(0),
         Tier.CDC: OffloadDecision.cdc()}[tier]
    return task, v, r, cdc, ch, d, rate, relay


def expected_total(task, v, r, cdc, ch, d, rate, relay):
    """Completion time written out from first principles."""
    if d.tier is Tier.LOCAL:
        return task.cpu / v.compute_capacity
    up = 8.0 * task.size / rate
    if d.tier is Tier.RSU:
        f = r.compute_capacity
        wait = queue_wait_by_events([j.flops_left / f for j in r.running_tasks],
                                    [j.flops_total / f for j in r.queue], r.concurrency_limit)
        return up + relay + wait + task.cpu / f
    dist = math.dist(r.position, cdc.position)
    share = cdc.compute_capacity / (cdc.active_tasks + 1)
    return up + task.cpu / share + 2 * dist / (ch.prop_speed * ch.attenuation)


def lrm_oracle(total, weights):
    """Largest-remainder apportionment in exact rational arithmetic."""
    w = [Fraction(x).limit_denominator(10**9) for x in weights]
    s = sum(w)
    quotas = [total * x / s for x in w]
    base = [math.floor(q) for q in quotas]
    short = total - sum(base)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base
