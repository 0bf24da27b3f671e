"""Radio and backhaul link model.

Rates are in bits/s, payloads in bytes, times in seconds.
"""
from __future__ import annotations

import heapq
import math
from collections import defaultdict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .worldmodel import distance

__all__ = [
    "ChannelParams",
    "PathInfeasible",
    "link_rate",
    "snr",
    "propagation_delay",
    "rtt_backhaul",
    "backhaul_pull_time",
    "mesh_path_time",
    "mutual_range",
    "find_relay_path",
    "effective_rate",
    "share_rates",
    "draw_fading",
]


class PathInfeasible(ValueError):
    """A relay hop is not within mutual radio range."""


class ChannelParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    bandwidth: float = Field(500e6, gt=0)
    r2r_bandwidth: float | None = Field(None, gt=0)
    pathloss_exp: float = Field(2.0, gt=0)
    noise: float = Field(1e-7, gt=0)
    fading_scale: float = Field(1.0, gt=0)
    prop_speed: float = Field(3e8, gt=0)
    attenuation: float = Field(0.67, gt=0, le=1)
    resample_fading_every: int = Field(1, ge=1)
    min_distance: float = Field(1.0, gt=0)
    backhaul_rate: float = Field(1e9, gt=0)

    def bandwidth_for(self, kind: str) -> float:
        if kind == "R2R" and self.r2r_bandwidth is not None:
            return self.r2r_bandwidth
        return self.bandwidth


def snr(a, b, params: ChannelParams, fading_gain: float = 1.0) -> float:
    d = max(distance(a, b), params.min_distance)
    p = min(a.tx_power, b.tx_power)
    return p * d ** -params.pathloss_exp * fading_gain / params.noise


def link_rate(a, b, params: ChannelParams, fading_gain: float = 1.0,
              kind: str = "V2R") -> float:
    """Shannon rate with path loss and a Rayleigh power gain.

    rate = B * log2(1 + min(P_a, P_b) * d**(-sigma) * |h|^2 / N0), with d
    floored at ``params.min_distance``.
    """
    if fading_gain < 0:
        raise ValueError("fading gain must be non-negative")
    return params.bandwidth_for(kind) * math.log2(1.0 + snr(a, b, params, fading_gain))


def propagation_delay(a, b, params: ChannelParams) -> float:
    return distance(a, b) / params.prop_speed


def rtt_backhaul(r, cdc, params: ChannelParams) -> float:
    """Round trip over the wired backhaul: 2 * d / (v * zeta)."""
    return 2.0 * distance(r, cdc) / (params.prop_speed * params.attenuation)


def backhaul_pull_time(size_bytes: float, r, cdc, params: ChannelParams) -> float:
    """Time to pull an image of ``size_bytes`` from the CDC to ``r``."""
    return rtt_backhaul(r, cdc, params) + 8.0 * size_bytes / params.backhaul_rate


def mutual_range(a, b) -> bool:
    return distance(a, b) < min(a.coverage_radius, b.coverage_radius)


def mesh_path_time(path, payload_bytes: float, params: ChannelParams,
                   fading=None) -> float:
    """Store-and-forward time over a list of ``(a, b)`` hops.

    Each hop costs payload / rate + propagation.  ``fading`` optionally gives
    one power gain per hop (default: unit gain).
    """
    if not path:
        raise PathInfeasible("empty relay path")
    gains = [1.0] * len(path) if fading is None else list(fading)
    total = 0.0
    for (a, b), g in zip(path, gains):
        if not mutual_range(a, b):
            raise PathInfeasible(f"hop {a.id}->{b.id} out of range")
        rate = link_rate(a, b, params, g, kind="R2R")
        total += 8.0 * payload_bytes / rate + propagation_delay(a, b, params)
    return total


def find_relay_path(src, dst, rsus):
    """Minimum-hop relay path between two RSUs, or None if disconnected.

    Ties on hop count break on total distance, then on the sequence of node
    ids.  Dead RSUs (``alive`` false) are not used.
    """
    if src.id == dst.id:
        return []
    nodes = {r.id: r for r in rsus if getattr(r, "alive", True)}
    if src.id not in nodes or dst.id not in nodes:
        return None
    adj = defaultdict(list)
    ids = sorted(nodes)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if mutual_range(nodes[a], nodes[b]):
                d = distance(nodes[a], nodes[b])
                adj[a].append((b, d))
                adj[b].append((a, d))
    heap = [(0, 0.0, (src.id,))]
    settled = set()
    while heap:
        hops, dist, route = heapq.heappop(heap)
        node = route[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == dst.id:
            return [(nodes[route[k]], nodes[route[k + 1]]) for k in range(len(route) - 1)]
        for nxt, d in adj[node]:
            if nxt not in settled:
                heapq.heappush(heap, (hops + 1, dist + d, route + (nxt,)))
    return None


def effective_rate(rate: float, n_sharing: int) -> float:
    """Equal split of a radio's rate among ``n_sharing`` active transfers."""
    return rate / n_sharing if n_sharing > 1 else rate


def share_rates(demands):
    """Split rates per radio.

    ``demands`` maps a connection key to ``(radio, link_rate)``; the result maps
    the same keys to the rate each connection actually gets this tick.
    """
    counts = defaultdict(int)
    for radio, _ in demands.values():
        counts[radio] += 1
    return {k: effective_rate(rate, counts[radio]) for k, (radio, rate) in demands.items()}


def draw_fading(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    """Rayleigh power gains: exponential with mean ``scale``."""
    return rng.exponential(scale, size=n)
