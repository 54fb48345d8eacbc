"""Distributional and algebraic checks on the system primitives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from qbeam.model import (
    FlowParams,
    SystemConfig,
    beam_gains,
    goodput,
    make_streams,
    mutual_information,
    per_stage_cost,
    queue_update,
    sample_arrivals,
    sample_channel,
    sample_channel_given_csit,
    sample_joint_channel_csit,
)

CFG2 = SystemConfig(K=2, Nt=2)


def flows(K, rate=0.3, lam=0.24, gamma=1.0, eps=0.1):
    return [FlowParams(rate=rate, lam=lam, gamma=gamma, eps=eps) for _ in range(K)]


def test_config_validation():
    with pytest.raises(ValueError):
        SystemConfig(K=3, Nt=2)
    with pytest.raises(ValueError):
        FlowParams(rate=0.3, lam=0.3)  # lam == rate is already unstable
    with pytest.raises(ValueError):
        FlowParams(rate=0.3, lam=0.24, eps=0.0)
    with pytest.raises(ValueError):
        FlowParams(rate=0.3, lam=0.24, eps=1.5)


def test_channel_moments():
    rng = np.random.default_rng(7)
    big = sample_channel(rng, SystemConfig(K=2, Nt=50_000))
    var = np.mean(np.abs(big) ** 2)
    assert abs(var - 1.0) < 0.02
    # distinct rows are uncorrelated
    cross = np.mean(big[0] * big[1].conj())
    assert abs(cross) < 0.02


def test_channel_determinism():
    a = sample_channel(np.random.default_rng(123), CFG2)
    b = sample_channel(np.random.default_rng(123), CFG2)
    np.testing.assert_array_equal(a, b)


def test_make_streams_independent_and_reproducible():
    s1 = make_streams(99)
    s2 = make_streams(99)
    for name in s1:
        np.testing.assert_array_equal(s1[name].standard_normal(4), s2[name].standard_normal(4))
    s3 = make_streams(99)
    assert not np.allclose(s3["channel"].standard_normal(4), s3["arrivals"].standard_normal(4))


def test_joint_csit_variances_and_orthogonality():
    rng = np.random.default_rng(3)
    eps = 0.25
    cfg = SystemConfig(K=1, Nt=4)
    fl = flows(1, eps=eps)
    n = 50_000
    hs = np.empty((n, 4), dtype=complex)
    hhats = np.empty((n, 4), dtype=complex)
    for i in range(n):
        h, hh = sample_joint_channel_csit(rng, cfg, fl)
        hs[i] = h[0]
        hhats[i] = hh[0]
    assert abs(np.mean(np.abs(hs) ** 2) - 1.0) < 0.02
    assert abs(np.mean(np.abs(hhats) ** 2) - (1 - eps)) < 0.02
    # MMSE orthogonality: error uncorrelated with the estimate
    err_corr = np.mean((hhats - hs) * hhats.conj(), axis=0)
    se = 1.0 / np.sqrt(n)
    assert np.all(np.abs(err_corr) < 3 * se)


def test_eps_one_means_no_csit():
    rng = np.random.default_rng(5)
    cfg = SystemConfig(K=1, Nt=2)
    fl = [FlowParams(rate=0.3, lam=0.24, eps=1.0)]
    n = 50_000
    acc = 0.0
    for _ in range(n):
        h, hh = sample_joint_channel_csit(rng, cfg, fl)
        acc += (h[0] * hh[0].conj()).sum()
    assert abs(acc) / n < 0.02
    # and the estimate itself collapses to zero variance
    _, hh = sample_joint_channel_csit(rng, cfg, fl)
    assert np.allclose(hh, 0)


def test_conditional_sampling_consistency():
    # composing hhat with the conditional law must reproduce the joint law
    rng = np.random.default_rng(11)
    cfg = SystemConfig(K=1, Nt=3)
    eps = 0.3
    fl = flows(1, eps=eps)
    u = np.array([0.5, -0.5j, 0.7071])
    n = 100_000
    joint = np.empty(n)
    composed = np.empty(n)
    for i in range(n):
        h, hh = sample_joint_channel_csit(rng, cfg, fl)
        joint[i] = np.abs(np.vdot(h[0], u)) ** 2
        h2 = sample_channel_given_csit(rng, hh[0], eps)
        composed[i] = np.abs(np.vdot(h2, u)) ** 2
    assert ks_2samp(joint, composed).pvalue > 0.01


def test_mutual_information_arithmetic():
    # |h.w1|^2 = 3, |h.w2|^2 = 1 -> log2(1 + 3/2)
    H = np.array([[1.0 + 0j, 0.0]])
    beams = np.array([[np.sqrt(3.0), 0.0], [1.0, 0.0]], dtype=complex)
    got = mutual_information(np.vstack([H, H]), beams, 0)
    assert got == pytest.approx(np.log2(2.5), abs=1e-12)
    assert mutual_information(np.vstack([H, H]), np.zeros((2, 2), dtype=complex), 0) == 0.0


def test_mutual_information_single_flow():
    H = np.array([[1.0 + 0j]])
    w = np.array([[1.0 + 0j]])
    assert mutual_information(H, w, 0) == pytest.approx(1.0)


def test_goodput_boundary_inclusive():
    fl = flows(1, rate=1.0, lam=0.5)
    H = np.array([[1.0 + 0j]])
    w = np.array([[1.0 + 0j]])  # capacity exactly log2(2) = rate
    assert goodput(H, w, fl)[0] == 1.0
    w_weak = np.array([[0.99 + 0j]])
    assert goodput(H, w_weak, fl)[0] == 0.0
    assert goodput(H, np.zeros_like(w), fl)[0] == 0.0


def test_goodput_values_are_zero_or_rate():
    rng = np.random.default_rng(17)
    fl = flows(3)
    cfg = SystemConfig(K=3, Nt=3)
    for _ in range(50):
        H = sample_channel(rng, cfg)
        beams = sample_channel(rng, cfg)
        g = goodput(H, beams, fl)
        assert set(np.round(g, 12)) <= {0.0, 0.3}


def test_arrival_mean():
    rng = np.random.default_rng(23)
    fl = flows(1)
    tot = sum(sample_arrivals(rng, fl)[0] for _ in range(100_000))
    assert tot / 100_000 == pytest.approx(0.24, abs=5e-3)
    # arrivals are whole packets
    a = sample_arrivals(np.random.default_rng(1), fl)
    assert a[0] % 0.3 == pytest.approx(0.0, abs=1e-12)


@given(
    q=st.lists(st.floats(0, 1e6), min_size=1, max_size=4),
    served=st.floats(0, 10),
    arr=st.floats(0, 10),
)
def test_queue_update_properties(q, served, arr):
    q = np.array(q)
    out = queue_update(q, served, arr)
    assert np.all(out >= 0)
    assert np.all(out >= arr - 1e-12)  # arrivals always land
    # service never removes more than was present
    assert np.all(out <= q + arr + 1e-12)


def test_queue_update_examples():
    np.testing.assert_allclose(queue_update(np.array([1.0]), 0.3, 0.3), [1.0])
    np.testing.assert_allclose(queue_update(np.array([0.1]), 0.3, 0.24), [0.24])


def test_per_stage_cost():
    fl = [FlowParams(rate=1.0, lam=0.25, gamma=1.0)]
    w = np.array([[1.0 + 1j]])  # power 2
    assert per_stage_cost(np.array([0.5]), w, fl) == pytest.approx(4.0)
    assert per_stage_cost(np.zeros(1), np.zeros((1, 1)), fl) == 0.0
    # gamma scaling hits only the queue term
    fl2 = [FlowParams(rate=1.0, lam=0.25, gamma=2.0)]
    assert per_stage_cost(np.array([0.5]), w, fl2) == pytest.approx(6.0)


def test_beam_gains_shape():
    rng = np.random.default_rng(2)
    cfg = SystemConfig(K=2, Nt=3)
    H = sample_channel(rng, cfg)
    W = sample_channel(rng, cfg)
    g = beam_gains(H, W)
    assert g.shape == (2, 2)
    assert g[0, 1] == pytest.approx(np.abs(np.vdot(H[0], W[1])) ** 2)
