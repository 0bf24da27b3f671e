"""Initial world generation: Zipf-shaped attributes, clustered placement and
clustered feature vectors.

Every function takes an explicit ``numpy.random.Generator`` and is a pure
function of (config, generator state).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .worldmodel import CacheStore, RsuState, SdvState, ServiceSpec

__all__ = [
    "ZipfParams",
    "GenConfig",
    "zipf_pmf",
    "zipf_cdf",
    "sample_zipf",
    "rank_to_value",
    "apportion",
    "generate_services",
    "generate_topology",
    "generate_feature_vectors",
    "band_vector",
    "band_halfwidth",
    "generate_preferences",
]


@dataclass(frozen=True)
class ZipfParams:
    n: int
    alpha: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("zipf support size must be >= 1")
        if self.alpha < 0:
            raise ValueError("zipf exponent must be non-negative")


class GenConfig(BaseModel):
    """World-generation parameters.  Defaults follow the full-size table."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    canvas: tuple[float, float] = (10_000.0, 10_000.0)
    sdv_count: int = Field(1000, ge=1)
    rsu_count: int = Field(20, ge=1)
    density: list[float] | None = None
    service_count: int = Field(1_000_000, ge=1)
    cluster_count: int = Field(5, ge=1)
    dispersion: float = Field(0.3, gt=0)
    vector_len: int = Field(128, ge=1)
    size_range: tuple[float, float] = (1e6, 1e9)
    cpu_range: tuple[float, float] = (1e9, 1e13)
    charm_range: tuple[float, float] = (1.0, 100.0)
    size_alpha: float = Field(1.0, ge=0)
    cpu_alpha: float = Field(1.0, ge=0)
    charm_alpha: float = Field(1.0, ge=0)
    zipf_n: int | None = Field(None, ge=1)
    coverage_range: tuple[float, float] = (500.0, 3000.0)
    rsu_compute: float = Field(100e9, gt=0)
    rsu_tx_power: float = Field(10.0, gt=0)
    rsu_concurrency: int = Field(8, ge=1)
    sdv_compute: float = Field(10e9, gt=0)
    sdv_tx_power: float = Field(1.0, gt=0)
    sdv_cache_sizes: list[float] = Field(default_factory=lambda: [4e9, 8e9, 16e9])
    timeout_base: float = Field(30.0, gt=0)
    timeout_ref_flops: float = Field(50e9, gt=0)

    @model_validator(mode="after")
    def _check(self):
        problems = []
        if self.canvas[0] <= 0 or self.canvas[1] <= 0:
            problems.append("canvas: both sides must be positive")
        if self.density is not None:
            if len(self.density) != self.rsu_count:
                problems.append("density: needs one weight per RSU")
            if any(d <= 0 for d in self.density):
                problems.append("density: weights must be positive")
        for name in ("size_range", "cpu_range", "charm_range", "coverage_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                problems.append(f"{name}: need 0 < low <= high")
        if not self.sdv_cache_sizes or any(s < 0 for s in self.sdv_cache_sizes):
            problems.append("sdv_cache_sizes: need at least one non-negative size")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def weights(self) -> list[float]:
        return list(self.density) if self.density is not None else [1.0] * self.rsu_count


# --------------------------------------------------------------------------
# Zipf
# --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _zipf_table(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    ranks = np.arange(1, n + 1, dtype=float)
    w = ranks ** -alpha
    h = math.fsum(w)
    pmf = w / h
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    pmf.setflags(write=False)
    cdf.setflags(write=False)
    return pmf, cdf


def zipf_pmf(params: ZipfParams, k: int) -> float:
    """P(X = k) = 1 / (k**alpha * H_N) with the generalized harmonic number H_N."""
    if not 1 <= k <= params.n:
        raise ValueError(f"rank {k} outside [1, {params.n}]")
    return float(_zipf_table(params.n, float(params.alpha))[0][k - 1])


def zipf_cdf(params: ZipfParams) -> np.ndarray:
    return _zipf_table(params.n, float(params.alpha))[1]


def sample_zipf(params: ZipfParams, rng: np.random.Generator, size=None):
    """Draw rank(s) in [1, N] by inverse-CDF lookup."""
    if params.n == 1:
        return 1 if size is None else np.ones(size, dtype=np.int64)
    cdf = zipf_cdf(params)
    u = rng.random(size)
    r = np.searchsorted(cdf, u, side="right") + 1
    r = np.minimum(r, params.n)
    return int(r) if size is None else r.astype(np.int64)


def rank_to_value(rank, n: int, lo: float, hi: float):
    """Log-spaced magnitude for a rank: rank 1 maps to ``hi``, rank N to ``lo``."""
    if n == 1:
        return hi * np.ones_like(np.asarray(rank, dtype=float))
    frac = (np.asarray(rank, dtype=float) - 1.0) / (n - 1)
    return hi * (lo / hi) ** frac


# --------------------------------------------------------------------------
# topology
# --------------------------------------------------------------------------

def apportion(total: int, weights) -> list[int]:
    """Largest-remainder split of ``total`` proportional to ``weights``.

    Ties on the fractional remainder go to the lower index.  Quotas are
    exact rationals so equal remainders really compare equal.
    """
    w = [Fraction(float(x)) for x in weights]
    if not w or any(x <= 0 for x in w):
        raise ValueError("weights must be positive")
    s = sum(w)
    quotas = [total * x / s for x in w]
    base = [math.floor(q) for q in quotas]
    short = total - sum(base)
    order = sorted(range(len(w)), key=lambda i: (base[i] - quotas[i], i))
    for i in order[:short]:
        base[i] += 1
    return base


def _coverage_radii(cfg: GenConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    lo, hi = cfg.coverage_range
    if lo == hi:
        return np.full(n, lo)
    # normal centred in the range, three sigmas to each edge, clipped
    r = rng.normal((lo + hi) / 2, (hi - lo) / 6, size=n)
    return np.clip(r, lo, hi)


def generate_topology(cfg: GenConfig, rng: np.random.Generator, *,
                      rsu_cache_bytes: float = 0.0, clamp: bool = True):
    """Place RSUs uniformly and scatter SDV clusters around them.

    Returns ``(rsus, sdvs)``.  SDV i of cluster c is drawn in polar
    coordinates around RSU c with radius uniform on [0, coverage] and angle
    uniform on [0, 2*pi).  With ``clamp`` the result is pulled back onto the
    canvas; ``clamp=False`` exposes the raw draws.
    """
    X, Y = cfg.canvas
    n = cfg.rsu_count
    xs = rng.uniform(0, X, size=n)
    ys = rng.uniform(0, Y, size=n)
    radii = _coverage_radii(cfg, rng, n)
    rsus = [
        RsuState(id=i, position=(float(xs[i]), float(ys[i])),
                 coverage_radius=float(radii[i]), compute_capacity=cfg.rsu_compute,
                 tx_power=cfg.rsu_tx_power, concurrency_limit=cfg.rsu_concurrency,
                 cache=CacheStore(rsu_cache_bytes))
        for i in range(n)
    ]
    counts = apportion(cfg.sdv_count, cfg.weights)
    sdvs: list[SdvState] = []
    cache_choices = np.asarray(cfg.sdv_cache_sizes, dtype=float)
    for c, (rsu, k) in enumerate(zip(rsus, counts)):
        rad = rng.uniform(0, rsu.coverage_radius, size=k)
        ang = rng.uniform(0, 2 * math.pi, size=k)
        px = rsu.position[0] + rad * np.cos(ang)
        py = rsu.position[1] + rad * np.sin(ang)
        if clamp:
            px = np.clip(px, 0, X)
            py = np.clip(py, 0, Y)
        caches = rng.choice(cache_choices, size=k)
        for j in range(k):
            sdvs.append(SdvState(
                id=len(sdvs), position=(float(px[j]), float(py[j])),
                compute_capacity=cfg.sdv_compute, tx_power=cfg.sdv_tx_power,
                cache=CacheStore(float(caches[j])), cluster_id=c))
    return rsus, sdvs


# --------------------------------------------------------------------------
# feature vectors
# --------------------------------------------------------------------------

def _p_bounds(dispersion: float) -> tuple[float, float]:
    s = math.sqrt(2 * math.pi * dispersion ** 2)
    hi = min(1.0, 0.999 / s)
    return min(0.8, hi), hi


def band_halfwidth(dispersion: float, p) -> np.ndarray:
    """Half-width t of the sampling band for density level ``p``.

    Inverts a zero-mean Gaussian density of std ``dispersion``: t is the
    abscissa where the density equals p.
    """
    m2 = dispersion ** 2
    return np.sqrt(-2 * m2 * np.log(math.sqrt(2 * math.pi * m2) * np.asarray(p)))


def band_vector(center: np.ndarray, dispersion: float, rng: np.random.Generator,
                count: int | None = None) -> np.ndarray:
    """One (or ``count``) vectors around ``center`` via the band construction."""
    shape = center.shape if count is None else (count,) + center.shape
    lo, hi = _p_bounds(dispersion)
    p = rng.uniform(lo, hi, size=shape) if hi > lo else np.full(shape, hi)
    t = band_halfwidth(dispersion, p)
    return rng.uniform(center - t, center + t)


def generate_feature_vectors(cfg: GenConfig, rng: np.random.Generator):
    """Cluster centres and one feature vector per service.

    Returns ``(centers, vectors, labels)`` where centres are ``(f, v)`` with
    coordinates uniform on [0, 10], vectors are ``(g, v)`` and labels give each
    row's cluster.  Each cluster gets g // f services; the last one absorbs
    the remainder.
    """
    f, g, v = cfg.cluster_count, cfg.service_count, cfg.vector_len
    centers = rng.uniform(0, 10, size=(f, v))
    per = [g // f] * f
    per[-1] += g - sum(per)
    vectors = np.empty((g, v))
    labels = np.empty(g, dtype=np.int64)
    row = 0
    for i, a in enumerate(per):
        if a == 0:
            continue
        vectors[row:row + a] = band_vector(centers[i], cfg.dispersion, rng, count=a)
        labels[row:row + a] = i
        row += a
    return centers, vectors, labels


def generate_services(cfg: GenConfig, rng: np.random.Generator,
                      vectors: np.ndarray | None = None,
                      labels: np.ndarray | None = None,
                      first_id: int = 0) -> list[ServiceSpec]:
    """Services with Zipf-ranked size, compute demand and charm.

    Each attribute draws its own rank, then maps it log-linearly onto the
    configured range.  Feature vectors come from
    :func:`generate_feature_vectors` unless supplied.
    """
    g = cfg.service_count if vectors is None else len(vectors)
    n = cfg.zipf_n or cfg.service_count
    if vectors is None:
        _, vectors, labels = generate_feature_vectors(cfg, rng)
    sizes = rank_to_value(sample_zipf(ZipfParams(n, cfg.size_alpha), rng, g), n, *cfg.size_range)
    cpus = rank_to_value(sample_zipf(ZipfParams(n, cfg.cpu_alpha), rng, g), n, *cfg.cpu_range)
    charms = rank_to_value(sample_zipf(ZipfParams(n, cfg.charm_alpha), rng, g), n, *cfg.charm_range)
    timeouts = cfg.timeout_base + cpus / cfg.timeout_ref_flops
    return [
        ServiceSpec(id=first_id + i, size_bytes=float(sizes[i]), charm=float(charms[i]),
                    cpu_demand=float(cpus[i]), feature=vectors[i], cluster_id=int(labels[i]),
                    timeout=float(timeouts[i]))
        for i in range(g)
    ]


def generate_preferences(centers: np.ndarray, count: int, dispersion: float,
                         rng: np.random.Generator):
    """Preference vectors for ``count`` vehicles, each around a random centre."""
    clusters = rng.integers(0, len(centers), size=count)
    prefs = np.empty((count, centers.shape[1]))
    for i, c in enumerate(clusters):
        prefs[i] = band_vector(centers[c], dispersion, rng)
    return prefs, clusters
