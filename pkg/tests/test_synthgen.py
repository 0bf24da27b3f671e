from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import lrm_oracle
from vedge.synthgen import (GenConfig, ZipfParams, apportion, band_halfwidth, band_vector,
                            generate_feature_vectors, generate_preferences, generate_services,
                            generate_topology, rank_to_value, sample_zipf, zipf_cdf, zipf_pmf)
from vedge.worldmodel import distance


def rng(seed=0):
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# Zipf
# --------------------------------------------------------------------------

def test_zipf_pmf_matches_harmonic_oracle():
    n, a = 50, 1.0
    h = sum(Fraction(1, k) for k in range(1, n + 1))
    for k in (1, 2, 7, 50):
        assert zipf_pmf(ZipfParams(n, a), k) == pytest.approx(float(1 / (k * h)), rel=1e-13)


@given(st.integers(1, 2000), st.floats(0.0, 3.0))
def test_zipf_pmf_normalised(n, a):
    p = ZipfParams(n, a)
    total = math.fsum(zipf_pmf(p, k) for k in range(1, n + 1))
    assert abs(total - 1.0) <= 1e-12
    assert zipf_cdf(p)[-1] == 1.0


def test_zipf_alpha_zero_is_uniform():
    p = ZipfParams(10, 0.0)
    assert all(zipf_pmf(p, k) == pytest.approx(0.1) for k in range(1, 11))


def test_zipf_worked_example():
    # N = 3, alpha = 1: H = 11/6
    p = ZipfParams(3, 1.0)
    assert zipf_pmf(p, 1) == pytest.approx(6 / 11)
    assert zipf_pmf(p, 3) == pytest.approx(2 / 11)


def test_zipf_chi_square_small():
    p = ZipfParams(20, 1.2)
    draws = sample_zipf(p, rng(3), 200_000)
    obs = np.bincount(draws, minlength=21)[1:]
    exp = np.array([zipf_pmf(p, k) for k in range(1, 21)]) * len(draws)
    assert stats.chisquare(obs, exp).pvalue > 0.01


@given(st.integers(1, 500), st.floats(0.0, 2.5), st.integers(0, 10_000))
def test_zipf_samples_in_support(n, a, seed):
    r = sample_zipf(ZipfParams(n, a), rng(seed), 64)
    assert r.min() >= 1 and r.max() <= n


def test_zipf_rejects_bad_params():
    with pytest.raises(ValueError):
        ZipfParams(0, 1.0)
    with pytest.raises(ValueError):
        ZipfParams(5, -0.1)
    with pytest.raises(ValueError):
        zipf_pmf(ZipfParams(5, 1.0), 6)


@given(st.integers(2, 10_000), st.floats(1e-3, 1e3), st.floats(1.0, 1e6))
def test_rank_to_value_in_range_and_monotone(n, lo, span):
    hi = lo * span
    ranks = np.arange(1, n + 1)
    v = rank_to_value(ranks, n, lo, hi)
    assert v[0] == pytest.approx(hi) and v[-1] == pytest.approx(lo)
    assert np.all(np.diff(v) <= 0)
    assert np.all((v >= lo * (1 - 1e-12)) & (v <= hi * (1 + 1e-12)))


def test_full_size_attribute_ranges():
    cfg = GenConfig(service_count=10_000, cluster_count=5)
    svcs = generate_services(cfg, rng(1))
    sizes = np.array([s.size_bytes for s in svcs])
    cpus = np.array([s.cpu_demand for s in svcs])
    # 1 MB - 1 GB images, 1 GFLOP - 10 TFLOP workloads
    assert sizes.min() >= 1e6 * (1 - 1e-12) and sizes.max() <= 1e9 * (1 + 1e-12)
    assert cpus.min() >= 1e9 * (1 - 1e-12) and cpus.max() <= 1e13 * (1 + 1e-12)
    # rank 1 (the largest value) is the most frequent under alpha = 1
    assert np.mean(np.isclose(sizes, 1e9)) > np.mean(np.isclose(sizes, 1e6))


# --------------------------------------------------------------------------
# apportionment and topology
# --------------------------------------------------------------------------

@given(st.integers(0, 5000), st.lists(st.integers(1, 1000), min_size=1, max_size=30))
def test_apportion_matches_exact_oracle(total, weights):
    got = apportion(total, weights)
    assert got == lrm_oracle(total, weights)
    assert sum(got) == total


def test_apportion_worked_example():
    # quotas 3.5, 3.5, 3.0 -> one extra seat, tie broken toward the lower index
    assert apportion(10, [7, 7, 6]) == [4, 3, 3]
    assert apportion(100, [1.0] * 5) == [20] * 5
    # two remainders of exactly 4/7; floating point used to favour the later one
    assert apportion(468, [6, 86, 59, 3, 18, 88, 77, 86, 93, 30])[2:4] == [51, 2]


def test_apportion_rejects_non_positive_weights():
    with pytest.raises(ValueError):
        apportion(10, [1, 0])


@given(st.integers(1, 200), st.integers(1, 8), st.integers(0, 1000))
def test_sdvs_start_inside_their_cluster_rsu(m, n, seed):
    cfg = GenConfig(sdv_count=m, rsu_count=n, service_count=10, canvas=(3000.0, 3000.0),
                    coverage_range=(200.0, 900.0))
    rsus, sdvs = generate_topology(cfg, rng(seed), clamp=False)
    assert len(sdvs) == m
    assert [sum(v.cluster_id == c for v in sdvs) for c in range(n)] == apportion(m, [1] * n)
    for v in sdvs:
        assert distance(v, rsus[v.cluster_id]) <= rsus[v.cluster_id].coverage_radius + 1e-9


def test_topology_respects_density_and_canvas():
    cfg = GenConfig(sdv_count=90, rsu_count=3, density=[1, 2, 6], service_count=10,
                    canvas=(1000.0, 500.0))
    rsus, sdvs = generate_topology(cfg, rng(2))
    assert [sum(v.cluster_id == c for v in sdvs) for c in range(3)] == [10, 20, 60]
    assert all(0 <= v.position[0] <= 1000 and 0 <= v.position[1] <= 500 for v in sdvs)
    assert all(500 <= r.coverage_radius <= 3000 for r in rsus)
    assert {v.cache.capacity_bytes for v in sdvs} <= {4e9, 8e9, 16e9}


def test_full_size_defaults():
    cfg = GenConfig()
    assert (cfg.sdv_count, cfg.rsu_count, cfg.service_count, cfg.cluster_count) == (1000, 20, 10**6, 5)
    assert cfg.coverage_range == (500.0, 3000.0)
    assert cfg.rsu_compute == 100e9 and cfg.sdv_compute == 10e9
    assert cfg.sdv_cache_sizes == [4e9, 8e9, 16e9]


def test_config_collects_all_problems():
    with pytest.raises(ValueError) as e:
        GenConfig(size_range=(5.0, 1.0), rsu_count=2, density=[1.0])
    assert "size_range" in str(e.value) and "density" in str(e.value)


# --------------------------------------------------------------------------
# feature vectors
# --------------------------------------------------------------------------

def test_feature_vector_shapes():
    cfg = GenConfig(cluster_count=5, service_count=1000, vector_len=128)
    centers, vecs, labels = generate_feature_vectors(cfg, rng(0))
    assert centers.shape == (5, 128) and vecs.shape == (1000, 128)
    assert np.bincount(labels).tolist() == [200] * 5


def test_feature_vector_remainder_goes_to_last_cluster():
    cfg = GenConfig(cluster_count=3, service_count=10, vector_len=4)
    _, _, labels = generate_feature_vectors(cfg, rng(0))
    assert np.bincount(labels).tolist() == [3, 3, 4]


def _cos(a, b):
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    return a @ b.T


@pytest.mark.parametrize("seed", range(3))
def test_clusters_are_separated(seed):
    cfg = GenConfig(cluster_count=5, service_count=1000, vector_len=128)
    _, vecs, labels = generate_feature_vectors(cfg, rng(seed))
    c = _cos(vecs, vecs)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    cross = labels[:, None] != labels[None, :]
    assert c[same].mean() - c[cross].mean() > 0.05


@given(st.floats(0.05, 2.0), st.floats(0.0, 1.0))
def test_band_halfwidth_inverts_gaussian_density(disp, frac):
    m = disp
    peak = 1.0 / math.sqrt(2 * math.pi * m * m)
    p = min(peak * (0.01 + 0.98 * frac), 0.999 * peak)
    t = float(band_halfwidth(disp, p))
    dens = math.exp(-t * t / (2 * m * m)) * peak
    assert dens == pytest.approx(p, rel=1e-9)


def test_band_vectors_stay_near_centre():
    c = np.full(64, 5.0)
    v = band_vector(c, 0.3, rng(1), count=500)
    t_max = float(band_halfwidth(0.3, 0.8))
    assert np.all(np.abs(v - c) <= t_max + 1e-12)


def test_preferences_follow_centres():
    centers = rng(0).uniform(0, 10, size=(4, 16))
    prefs, clusters = generate_preferences(centers, 50, 0.3, rng(1))
    d = np.linalg.norm(prefs[:, None, :] - centers[None, :, :], axis=2)
    assert np.array_equal(d.argmin(axis=1), clusters)
