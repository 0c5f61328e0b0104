import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from kdsteal.errors import DomainError, ShapeError
from kdsteal.logits import (compose_htc, count_peaks, cross_entropy, ensemble_logits, entropy,
                            kl_divergence, log_soften, one_hot, soften)

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)
logit_vec = st.integers(2, 8).flatmap(lambda c: arrays(np.float64, c, elements=finite))
taus = st.floats(0.05, 200.0)


def prob_vec(c):
    return arrays(np.float64, c, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3).map(
        lambda a: a / a.sum())


prob_pair = st.integers(2, 8).flatmap(lambda c: st.tuples(prob_vec(c), prob_vec(c)))


# -- soften

def test_soften_uniform_for_constant_logits():
    for tau in (0.1, 1.0, 37.0):
        assert np.array_equal(soften([0, 0, 0, 0], tau), [0.25] * 4)


def test_soften_ln4():
    np.testing.assert_allclose(soften([math.log(4), 0, 0], 1.0), [2 / 3, 1 / 6, 1 / 6], rtol=0, atol=1e-15)


def test_soften_high_temperature_direct_evaluation():
    z = [10.0, 0.0, -10.0]
    e = [math.exp(v / 50) for v in z]
    expected = [v / sum(e) for v in e]
    np.testing.assert_allclose(soften(z, 50.0), expected, rtol=1e-14)
    assert entropy(soften(z, 50.0)) > entropy(soften(z, 4.0))


def test_soften_rejects_nonpositive_tau():
    for tau in (0.0, -1.0):
        with pytest.raises(DomainError):
            soften([1.0, 2.0], tau)


def test_soften_no_overflow_for_huge_logits():
    p = soften([1e300, 0.0, -1e300], 1e-3)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


@given(logit_vec, taus)
def test_soften_normalized(z, tau):
    p = soften(z, tau)
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p >= 0)


@given(logit_vec, taus)
def test_argmax_invariant_under_tau(z, tau):
    top = np.sort(z)[::-1]
    # gaps below float64 resolution of exp() collapse to an exact tie
    assume(top[0] == top[1] or (top[0] - top[1]) / tau > 1e-9)
    assert np.argmax(soften(z, tau)) == np.argmax(z)


@given(logit_vec, taus, taus)
def test_entropy_strictly_increasing_in_tau(z, t1, t2):
    lo, hi = sorted((t1, t2))
    h_lo, h_hi = entropy(soften(z, lo)), entropy(soften(z, hi))
    if np.ptp(z) == 0 or hi == lo:
        assert abs(h_hi - h_lo) <= 1e-12
    else:
        # saturated ends (one-hot or uniform in float64) are covered by the slack
        assert h_hi > h_lo - 1e-12


def test_entropy_strict_on_resolvable_pairs():
    z = np.array([3.0, 1.0, -2.0, 0.5])
    hs = [entropy(soften(z, t)) for t in (0.5, 1, 2, 4, 8, 16, 50)]
    assert all(b > a for a, b in zip(hs, hs[1:]))


@given(logit_vec)
def test_uniform_limit(z):
    c = len(z)
    for tau, tol in ((1e3, 0.1), (1e6, 1e-3)):
        assert np.max(np.abs(soften(z, tau) - 1.0 / c)) <= tol


@given(logit_vec, taus)
def test_log_soften_matches_log_of_soften(z, tau):
    np.testing.assert_allclose(np.exp(log_soften(z, tau)), soften(z, tau), rtol=1e-12, atol=1e-300)


# -- compose_htc

def test_compose_htc_identities():
    y = np.array([0.2, 0.5, 0.3])
    np.testing.assert_array_equal(compose_htc(y, 1, 0.0), [0, 1, 0])
    np.testing.assert_array_equal(compose_htc(y, 1, 1.0), y)


def test_compose_htc_hand_arithmetic():
    np.testing.assert_allclose(compose_htc([0.5, 0.25, 0.25], 0, 0.9), [0.55, 0.225, 0.225], atol=1e-15)


def test_compose_htc_errors():
    with pytest.raises(DomainError):
        compose_htc([0.5, 0.5], 0, 1.1)
    with pytest.raises(DomainError):
        compose_htc([0.5, 0.5], 2, 0.5)


@given(st.integers(2, 8).flatmap(lambda c: st.tuples(prob_vec(c), st.integers(0, c - 1))),
       st.floats(0.0, 1.0))
def test_compose_htc_floor_and_normalization(case, alpha):
    y, target = case
    y_net = compose_htc(y, target, alpha)
    assert y_net[target] >= 1.0 - alpha
    assert abs(y_net.sum() - 1.0) <= 1e-9


# -- ensemble

def test_ensemble_small_cases(rng):
    z = rng.normal(size=5)
    assert np.array_equal(ensemble_logits([z, z, z]), z)
    np.testing.assert_array_equal(ensemble_logits([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])


def test_ensemble_summation_oracle(rng):
    members = [rng.normal(size=7) for _ in range(3)]
    oracle = [math.fsum(m[i] for m in members) / 3 for i in range(7)]
    np.testing.assert_allclose(ensemble_logits(members), oracle, rtol=0, atol=1e-12)


@given(logit_vec, st.integers(1, 6))
def test_ensemble_idempotent(z, k):
    assert np.max(np.abs(ensemble_logits([z] * k) - z)) <= 1e-12


def test_ensemble_errors():
    with pytest.raises(ShapeError):
        ensemble_logits([])
    with pytest.raises(ShapeError):
        ensemble_logits([[1.0, 2.0], [1.0, 2.0, 3.0]])
    with pytest.raises(DomainError):
        ensemble_logits([[1.0, 2.0]], space="median")


def test_ensemble_prob_space(rng):
    members = [rng.normal(size=4) for _ in range(3)]
    z = ensemble_logits(members, space="prob", tau=2.0)
    np.testing.assert_allclose(soften(z, 2.0), np.mean([soften(m, 2.0) for m in members], axis=0),
                               rtol=1e-12)


# -- KL / CE / entropy

def test_kl_examples():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    expected = 0.75 * math.log(0.75 / 0.25) + 0.25 * math.log(0.25 / 0.75)
    assert kl_divergence([0.75, 0.25], [0.25, 0.75]) == pytest.approx(expected, rel=1e-14)


def test_kl_shape_mismatch():
    with pytest.raises(ShapeError):
        kl_divergence([0.5, 0.5], [1 / 3] * 3)


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 1.0, 0.0], [0.0, 1.0, 0.0]) == 0.0
    expected = -(0.5 * math.log(0.9) + 0.5 * math.log(0.1))
    assert cross_entropy([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, rel=1e-14)


def test_entropy_examples():
    assert entropy([0.0, 1.0, 0.0]) == 0.0
    assert entropy([0.25] * 4) == pytest.approx(math.log(4), rel=1e-15)
    expected = -(0.7 * math.log(0.7) + 0.2 * math.log(0.2) + 0.1 * math.log(0.1))
    assert entropy([0.7, 0.2, 0.1]) == pytest.approx(expected, rel=1e-14)


@given(prob_pair)
def test_kl_nonnegative(pq):
    p, q = pq
    assert kl_divergence(p, q) >= 0.0
    assert kl_divergence(p, p) <= 1e-12


@given(prob_pair)
def test_ce_equals_kl_plus_entropy(pq):
    p, s = pq
    s = np.maximum(s, 1e-6)
    s = s / s.sum()
    assert abs(cross_entropy(p, s) - kl_divergence(p, s) - entropy(p)) <= 1e-10


def test_batch_reductions_run_over_last_axis(rng):
    p = soften(rng.normal(size=(5, 4)))
    q = soften(rng.normal(size=(5, 4)))
    kl = kl_divergence(p, q)
    assert kl.shape == (5,)
    np.testing.assert_allclose(kl, [kl_divergence(a, b) for a, b in zip(p, q)], rtol=1e-15)


# -- peaks

def test_count_peaks_examples():
    assert count_peaks([0.5, 0.4, 0.04, 0.06], 0.1) == 3
    assert count_peaks([0.0, 1.0, 0.0], 0.7) == 1
    assert count_peaks([0.2] * 5, 1.0) == 5


def test_count_peaks_rejects_bad_rho():
    for rho in (0.0, 1.5):
        with pytest.raises(DomainError):
            count_peaks([0.5, 0.5], rho)


@given(st.integers(2, 8).flatmap(prob_vec), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_count_peaks_bounded_and_monotone(p, r1, r2):
    lo, hi = sorted((r1, r2))
    n_lo, n_hi = count_peaks(p, lo), count_peaks(p, hi)
    assert 1 <= n_hi <= n_lo <= len(p)


def test_one_hot_batch():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
