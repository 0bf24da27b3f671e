"""Vehicle request behaviour: what to ask for, when to go quiet, and how
tastes and the catalogue change over time.
"""
from __future__ import annotations

import heapq
import logging
import math
from collections import Counter, deque

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .synthgen import GenConfig, ZipfParams, band_vector, rank_to_value, sample_zipf
from .worldmodel import ServiceSpec

log = logging.getLogger(__name__)

__all__ = [
    "DemandParams",
    "ServiceCatalog",
    "interest_score",
    "select_service",
    "sleep_seconds",
    "sleep_duration",
    "drift_preferences",
    "upload_services",
    "hot_ranking",
    "HotRanking",
]


class DemandParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    window: int = Field(50, ge=1)
    discount: float = Field(0.8, ge=0, le=1)
    hot_list_len: int = Field(10, ge=0)
    hot_window_ticks: int = Field(500, ge=1)
    sleep_k: float = Field(5.0, ge=0)
    sleep_sigma: float = Field(1.0, gt=0)
    sleep_trigger_prob: float = Field(1.0, ge=0, le=1)
    sleep_after_requests: int | None = Field(None, ge=1)
    drift_std: float = Field(0.05, ge=0)
    drift_every: int = Field(1, ge=1)
    service_drift_std: float = Field(0.0, ge=0)
    upload_rate: float = Field(0.0, ge=0)


class ServiceCatalog:
    """The CDC's service repository with row-aligned arrays for fast scoring."""

    def __init__(self, services=(), dim: int | None = None):
        self.services: dict[int, ServiceSpec] = {}
        self._dim = dim
        self._feat = np.empty((0, dim or 0))
        self._charm = np.empty(0)
        self._norm = np.empty(0)
        self._n = 0
        self.extend(services)

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, sid: int) -> ServiceSpec:
        return self.services[sid]

    @property
    def next_id(self) -> int:
        return self._n

    @property
    def features(self) -> np.ndarray:
        return self._feat[: self._n]

    @property
    def charms(self) -> np.ndarray:
        return self._charm[: self._n]

    @property
    def norms(self) -> np.ndarray:
        return self._norm[: self._n]

    def extend(self, services) -> None:
        services = list(services)
        if not services:
            return
        dim = len(services[0].feature)
        if self._dim is None or self._feat.shape[1] != dim:
            if self._n:
                raise ValueError("feature dimension mismatch")
            self._dim = dim
            self._feat = np.empty((0, dim))
        need = self._n + len(services)
        if need > len(self._charm):
            cap = max(need, 2 * len(self._charm), 16)
            feat = np.empty((cap, self._dim))
            feat[: self._n] = self._feat[: self._n]
            charm = np.empty(cap)
            charm[: self._n] = self._charm[: self._n]
            norm = np.empty(cap)
            norm[: self._n] = self._norm[: self._n]
            self._feat, self._charm, self._norm = feat, charm, norm
        for s in services:
            if s.id != self._n:
                raise ValueError(f"service ids must be contiguous; got {s.id}, expected {self._n}")
            self._feat[self._n] = s.feature
            s.feature = self._feat[self._n]
            self._charm[self._n] = s.charm
            self._norm[self._n] = np.linalg.norm(s.feature)
            self.services[s.id] = s
            self._n += 1

    def refresh_norms(self) -> None:
        self._norm[: self._n] = np.linalg.norm(self._feat[: self._n], axis=1)


def interest_score(v, s) -> float:
    """Charm times the cosine between a preference and a feature vector.

    Zero-norm vectors score 0.
    """
    h, f = np.asarray(v.preference), np.asarray(s.feature)
    nh, nf = np.linalg.norm(h), np.linalg.norm(f)
    if nh == 0 or nf == 0:
        log.debug("zero-norm vector in interest score (sdv %s, service %s)",
                  getattr(v, "id", "?"), getattr(s, "id", "?"))
        return 0.0
    return float(s.charm * (h @ f) / (nh * nf))


def _sample_distinct(k: int, num: int, rng: np.random.Generator) -> list[int]:
    num = min(num, k)
    picked: list[int] = []
    seen: set[int] = set()
    while len(picked) < num:
        for d in rng.integers(0, k, size=num - len(picked)).tolist():
            if d not in seen:
                seen.add(d)
                picked.append(d)
                if len(picked) == num:
                    break
    return picked


def select_service(v, catalog: ServiceCatalog, hot_list, params: DemandParams,
                   rng: np.random.Generator) -> int:
    """Pick the service a vehicle requests next.

    ``params.window`` distinct services are sampled uniformly, the hot list
    is merged in, each candidate is scored, and services the vehicle has
    already used are discounted by ``params.discount``.  The top score wins;
    ties go to the lower id.
    """
    if len(catalog) == 0:
        raise ValueError("empty catalogue")
    cand = set(_sample_distinct(len(catalog), params.window, rng))
    cand.update(s for s in hot_list if s < len(catalog))
    ids = np.fromiter(sorted(cand), dtype=np.int64)
    h = v.preference
    hn = np.linalg.norm(h)
    norms = catalog.norms[ids]
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = (catalog.features[ids] @ h) / (norms * hn)
    cos = np.where((norms == 0) | (hn == 0), 0.0, cos)
    scores = catalog.charms[ids] * cos
    if params.discount != 1.0 and v.accessed_history:
        seen = np.fromiter((i in v.accessed_history for i in ids.tolist()), dtype=bool,
                           count=len(ids))
        scores = np.where(seen, scores * params.discount, scores)
    return int(ids[int(np.argmax(scores))])


def sleep_seconds(accel: float, speed: float, params: DemandParams,
                  rng: np.random.Generator, size=None):
    """Draw k * U(e^|a|, e^|a| + log_{1+sigma}(v)) seconds.

    The log term is floored at zero, so speeds at or below 1 m/s give the
    single value k * e^|a|.
    """
    lo = math.exp(abs(accel))
    width = math.log(speed) / math.log1p(params.sleep_sigma) if speed > 1.0 else 0.0
    return params.sleep_k * rng.uniform(lo, lo + width, size=size)


def sleep_duration(v, params: DemandParams, rng: np.random.Generator, dt: float) -> int:
    """Sleep length in whole ticks (ceiling)."""
    return int(math.ceil(sleep_seconds(v.acceleration, v.velocity, params, rng) / dt - 1e-12))


def drift_preferences(pref: np.ndarray, params: DemandParams, rng: np.random.Generator,
                      scale: float = 1.0, clamp: bool = True) -> np.ndarray:
    """Add zero-mean Gaussian noise to each coordinate, clipped to [0, 10]."""
    std = params.drift_std * scale
    out = pref + rng.normal(0.0, std, size=pref.shape) if std > 0 else pref.copy()
    return np.clip(out, 0.0, 10.0) if clamp else out


def upload_services(catalog: ServiceCatalog, centers: np.ndarray, gen: GenConfig,
                    params: DemandParams, rng: np.random.Generator, tick: int,
                    count: int | None = None, cluster: int | None = None) -> list[ServiceSpec]:
    """Create this tick's new services and append them to ``catalog``.

    The count is Poisson with mean ``params.upload_rate`` unless given.  Each
    new service sits around a uniformly chosen centre (or ``cluster``) and
    takes Zipf-ranked attributes like the initial catalogue.
    """
    if count is None:
        count = int(rng.poisson(params.upload_rate)) if params.upload_rate > 0 else 0
    if count == 0:
        return []
    n = gen.zipf_n or gen.service_count
    labels = (rng.integers(0, len(centers), size=count) if cluster is None
              else np.full(count, cluster))
    vecs = np.stack([band_vector(centers[c], gen.dispersion, rng) for c in labels])
    sizes = rank_to_value(sample_zipf(ZipfParams(n, gen.size_alpha), rng, count), n, *gen.size_range)
    cpus = rank_to_value(sample_zipf(ZipfParams(n, gen.cpu_alpha), rng, count), n, *gen.cpu_range)
    charms = rank_to_value(sample_zipf(ZipfParams(n, gen.charm_alpha), rng, count), n,
                           *gen.charm_range)
    first = catalog.next_id
    new = [ServiceSpec(id=first + i, size_bytes=float(sizes[i]), charm=float(charms[i]),
                       cpu_demand=float(cpus[i]), feature=vecs[i], cluster_id=int(labels[i]),
                       timeout=float(gen.timeout_base + cpus[i] / gen.timeout_ref_flops))
           for i in range(count)]
    catalog.extend(new)
    return new


def _top(counts, k: int) -> list[int]:
    return [sid for sid, _ in heapq.nsmallest(k, counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def hot_ranking(request_log, params: DemandParams, tick: int) -> list[int]:
    """Most requested services over the trailing window ending at ``tick``.

    ``request_log`` is an iterable of ``(tick, service_id)``.
    """
    lo = tick - params.hot_window_ticks
    counts = Counter(sid for t, sid in request_log if lo < t <= tick)
    return _top(counts, params.hot_list_len)


class HotRanking:
    """Incremental version of :func:`hot_ranking` used inside the tick loop."""

    def __init__(self, params: DemandParams):
        self.params = params
        self._log: deque = deque()
        self._counts: Counter = Counter()
        self.current: list[int] = []

    def record(self, tick: int, sid: int) -> None:
        self._log.append((tick, sid))
        self._counts[sid] += 1

    def rebuild(self, tick: int) -> list[int]:
        lo = tick - self.params.hot_window_ticks
        while self._log and self._log[0][0] <= lo:
            _, sid = self._log.popleft()
            self._counts[sid] -= 1
            if self._counts[sid] == 0:
                del self._counts[sid]
        self.current = _top(self._counts, self.params.hot_list_len)
        return self.current
