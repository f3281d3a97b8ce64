import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoiprice.aoi import (aggregate_rates, analyze, aoi_ccdf, ccdf_table, demand, expected_aoi,
                          per_device_rates, taboo_upload_distribution, upload_time_distribution)
from aoiprice.errors import MemoryGuard
from aoiprice.mobility import TabooPowers, build_model

from conftest import random_chain


def test_zero_threshold_origin_uploads_immediately():
    m = build_model(random_chain(4, np.random.default_rng(0)))
    tau = np.array([0, 3, 2, 1])
    f = upload_time_distribution(m, tau, origin=0)
    expected = np.zeros_like(f)
    expected[0, 0] = 1.0
    assert np.array_equal(f, expected)
    assert expected_aoi(f[None], 0) == 1.0


def test_two_location_hand_case():
    P = np.array([[0.7, 0.3], [0.4, 0.6]])
    m = build_model(P)
    f = upload_time_distribution(m, [0, 1], origin=1)
    assert f.shape == (2, 2)
    assert np.all(f[:, 0] == 0)
    assert np.allclose(f[:, 1], P[1], atol=0)


def test_all_zero_thresholds_identity():
    m = build_model(random_chain(5, np.random.default_rng(1)))
    y = analyze(m, np.zeros(5, int)).y
    assert np.array_equal(y, np.eye(5))
    ag = aggregate_rates(y, m)
    assert np.allclose(ag.Y, m.stationary)
    C = np.arange(1.0, 6.0)
    assert C @ ag.Y == pytest.approx(C @ ag.D)


def random_case(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 7))
    m = build_model(random_chain(L, rng, 2.0))
    tau = rng.integers(0, 6, L)
    return m, tau


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_and_conservation(seed):
    m, tau = random_case(seed)
    f = upload_time_distribution(m, tau)
    assert np.allclose(f.sum(axis=(1, 2)), 1.0, atol=1e-9)
    y = per_device_rates(f)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-9)
    ag = aggregate_rates(y, m, N=3, F=2.0, kappa=0.5)
    assert ag.Y.sum() == pytest.approx(ag.D.sum(), abs=1e-9)
    # nothing is uploaded before its age passes the local threshold
    t = np.arange(1, f.shape[-1] + 1)
    early = t[None, :] <= tau[:, None]
    assert np.all(f[:, early] == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dual_path_agreement(seed):
    m, tau = random_case(seed)
    cache = TabooPowers(m)
    fwd = upload_time_distribution(m, tau)
    for i in range(m.num_locations):
        assert np.abs(taboo_upload_distribution(m, tau, i, cache) - fwd[i]).max() <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ccdf_properties(seed):
    m, tau = random_case(seed)
    an = analyze(m, tau)
    H = an.f.shape[-1]
    for i in range(m.num_locations):
        curve = an.ccdf_curve(i)
        assert np.all(np.diff(curve) <= 1e-12)
        assert aoi_ccdf(an.f, i, H) == 0.0
        # tail-sum identity
        assert curve.sum() == pytest.approx(an.mean_aoi[i], abs=1e-9)
        assert expected_aoi(an.f, i) == pytest.approx(an.mean_aoi[i], abs=1e-12)
        if tau[i] > 0:
            assert aoi_ccdf(an.f, i, 0) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(ccdf_table(an.f, 2), [aoi_ccdf(an.f, i, 2) for i in range(m.num_locations)])


def test_demand_validation():
    m = build_model([[0.5, 0.5], [0.5, 0.5]])
    assert np.allclose(demand(m, 10, 2.0, 4.0), [2.5, 2.5])
    with pytest.raises(ValueError):
        demand(m, 0, 1.0, 1.0)


def test_memory_guard():
    L = 513
    P = np.full((L, L), 1.0 / L)
    m = build_model(P)
    with pytest.raises(MemoryGuard):
        upload_time_distribution(m, np.zeros(L, int))
