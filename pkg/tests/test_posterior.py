import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rafa import posterior as P
from rafa.posterior import GaussianPosterior, NumericalError, Observation
from rafa.verify import check_det_ratio_norm, check_regularity_pairs

seeds = st.integers(0, 2**31 - 1)


def with_precision(M, xty=None):
    M = np.asarray(M, dtype=float)
    return GaussianPosterior(M, np.zeros(len(M)) if xty is None else np.asarray(xty, float))


def feed(post, psis, ys):
    for psi, y in zip(psis, ys):
        post = post.update(Observation(psi, y))
    return post


# --- update ----------------------------------------------------------------------------


def test_zero_feature_leaves_belief_unchanged():
    post = GaussianPosterior.prior(3)
    new = post.update(Observation(np.zeros(3), 5.0))
    np.testing.assert_array_equal(new.precision, post.precision)
    np.testing.assert_array_equal(new.mean, post.mean)
    assert P.entropy(new) == P.entropy(post)


def test_single_observation_by_hand():
    post = GaussianPosterior.prior(1).update(Observation([1.0], 2.0))
    assert post.precision[0, 0] == 2.0
    assert post.mean[0] == pytest.approx(1.0, abs=1e-15)


def test_fifty_observations_match_dense_ridge(rng):
    psis, ys = rng.normal(size=(50, 6)), rng.normal(size=50)
    post = feed(GaussianPosterior.prior(6, 0.7, 1.3), psis, ys)
    ref = P.ridge_solution(psis, ys, 0.7, 1.3)
    assert np.linalg.norm(post.mean - ref) / np.linalg.norm(ref) <= 1e-8


def test_non_finite_observation_rejected():
    with pytest.raises(ValueError):
        Observation([np.nan, 1.0], 0.0)
    with pytest.raises(ValueError):
        Observation([1.0], np.inf)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        GaussianPosterior.prior(3).update(Observation([1.0, 2.0], 0.0))


def test_non_spd_precision_raises_numerical_error():
    with pytest.raises(NumericalError):
        P.entropy(with_precision([[1.0, 2.0], [2.0, 1.0]]))


@given(seeds)
def test_fast_path_agrees_with_cholesky_path(seed):
    rng = np.random.default_rng(seed)
    psis, ys = rng.normal(size=(40, 5)), rng.normal(size=40)
    slow = feed(GaussianPosterior.prior(5, 1.5, 0.8), psis, ys)
    fast = feed(GaussianPosterior.prior(5, 1.5, 0.8, fast=True), psis, ys)
    assert np.linalg.norm(fast.mean - slow.mean) / max(np.linalg.norm(slow.mean), 1e-12) <= 1e-8


@given(seeds)
def test_precision_equals_prior_plus_outer_products(seed):
    rng = np.random.default_rng(seed)
    psis, ys = rng.normal(size=(20, 4)), rng.normal(size=20)
    post = feed(GaussianPosterior.prior(4, 2.0, 0.5), psis, ys)
    np.testing.assert_allclose(post.precision, 2.0 * np.eye(4) + psis.T @ psis / 0.25, rtol=1e-12)


def test_serialization_round_trip(tmp_path, rng):
    post = feed(GaussianPosterior.prior(3), rng.normal(size=(5, 3)), rng.normal(size=5))
    post.save(tmp_path / "post.json")
    back = GaussianPosterior.load(tmp_path / "post.json")
    np.testing.assert_array_equal(back.precision, post.precision)
    np.testing.assert_array_equal(back.mean, post.mean)


# --- entropy and information gain -------------------------------------------------------


def test_entropy_unit_precision_d2():
    assert P.entropy(GaussianPosterior.prior(2)) == pytest.approx(2.837877, abs=1e-6)


def test_scaling_precision_by_four_drops_entropy_by_log4():
    h1 = P.entropy(with_precision(np.eye(2)))
    h4 = P.entropy(with_precision(4 * np.eye(2)))
    assert h1 - h4 == pytest.approx(math.log(4.0), abs=1e-12)


def test_gain_unit_feature():
    assert P.information_gain(GaussianPosterior.prior(3), np.eye(3)[0]) == pytest.approx(0.346574, abs=1e-6)


def test_gain_zero_feature():
    assert P.information_gain(GaussianPosterior.prior(3), np.zeros(3)) == 0.0


@given(seeds, st.floats(0.1, 5.0), st.floats(0.2, 3.0))
def test_gain_equals_entropy_drop(seed, lam, sigma):
    rng = np.random.default_rng(seed)
    post = feed(GaussianPosterior.prior(4, lam, sigma), rng.normal(size=(10, 4)), rng.normal(size=10))
    psi = rng.normal(size=4) * 3
    new = post.update(Observation(psi, 1.0))
    assert abs((P.entropy(post) - P.entropy(new)) - P.information_gain(post, psi)) <= 1e-10
    assert P.entropy(new) < P.entropy(post)


def test_gain_is_vectorized(rng):
    post = GaussianPosterior.prior(3, 0.5)
    X = rng.normal(size=(4, 2, 3))
    g = P.information_gain(post, X)
    assert g.shape == (4, 2)
    assert g[1, 1] == pytest.approx(P.information_gain(post, X[1, 1]))


@given(seeds)
def test_gain_telescopes_to_entropy_change(seed):
    rng = np.random.default_rng(seed)
    post = GaussianPosterior.prior(5)
    h0 = P.entropy(post)
    total = 0.0
    for psi in rng.normal(size=(25, 5)):
        total += P.information_gain(post, psi)
        post = post.update(Observation(psi, 0.0))
    assert abs(total - (h0 - P.entropy(post))) <= 1e-8


@given(seeds, st.integers(1, 12), st.integers(1, 200), st.floats(0.1, 5.0))
def test_entropy_budget_bounds_entropy_drop(seed, d, T, R):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, d))
    X *= R / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), R)  # rows with norm <= R
    post = feed(GaussianPosterior.prior(d), X, np.zeros(T))
    drop = P.entropy(GaussianPosterior.prior(d)) - P.entropy(post)
    assert drop <= P.entropy_budget(d, T, R, 1.0) + 1e-9


# --- sampling and BMA -----------------------------------------------------------------------


def test_vanishing_covariance_samples_at_mean(rng):
    base = feed(GaussianPosterior.prior(4), rng.normal(size=(6, 4)), rng.normal(size=6))
    tight = GaussianPosterior(base.precision * 1e12, base.xty * 1e12)
    for _ in range(10):
        assert np.abs(P.sample(tight, rng) - tight.mean).max() <= 1e-5


def test_sample_variance_is_inverse_precision(rng):
    post = with_precision([[4.0]])
    draws = np.array([P.sample(post, rng)[0] for _ in range(100_000)])
    assert abs(draws.var() - 0.25) <= 0.01


def test_sample_mean_inside_clt_band(rng):
    post = feed(GaussianPosterior.prior(3), rng.normal(size=(4, 3)), rng.normal(size=4))
    n = 100_000
    draws = np.array([P.sample(post, rng) for _ in range(n)])
    band = 4 * np.sqrt(np.diag(np.linalg.inv(post.precision)) / n)
    assert np.all(np.abs(draws.mean(0) - post.mean) <= band)
    assert np.all(np.abs(draws.mean(0) - P.bma_parameter(post)) <= band)


def test_bma_empty_buffer_is_prior_mean():
    np.testing.assert_array_equal(P.bma_parameter(GaussianPosterior.prior(5)), np.zeros(5))


def test_bma_concentrates_at_truth(rng):
    d = 4
    theta = rng.normal(size=d)
    post = GaussianPosterior.prior(d)
    # weight 1000 on each basis vector equals 10^6 repeated unit observations
    for i in range(d):
        post = post.update(Observation(1000.0 * np.eye(d)[i], 1000.0 * theta[i]))
    assert np.abs(P.bma_parameter(post) - theta).max() <= 1e-2


# --- bonus ----------------------------------------------------------------------------------


def test_bonus_zero_feature():
    assert P.bonus(GaussianPosterior.prior(2), np.zeros(2), 1.0) == 0.0


def test_bonus_by_hand():
    psi = math.sqrt(math.e - 1) * np.eye(2)[0]  # gain = 1/2 log(e) = 0.5
    post = GaussianPosterior.prior(2)
    assert P.information_gain(post, psi) == pytest.approx(0.5, abs=1e-12)
    assert P.bonus(post, psi, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_bonus_requires_positive_bound():
    with pytest.raises(ValueError):
        P.bonus(GaussianPosterior.prior(2), np.ones(2), 0.0)


@given(seeds)
def test_bonus_never_rises_with_data(seed):
    rng = np.random.default_rng(seed)
    post = GaussianPosterior.prior(3)
    X = rng.normal(size=(8, 3))
    prev = P.bonus(post, X, 2.0)
    for psi in rng.normal(size=(10, 3)):
        post = post.update(Observation(psi, 0.0))
        cur = P.bonus(post, X, 2.0)
        assert np.all(cur <= prev + 1e-12)
        prev = cur


# --- appendix properties --------------------------------------------------------------------


@given(seeds)
def test_det_ratio_norm_bound(seed):
    assert check_det_ratio_norm(5, np.random.default_rng(seed)).passed


@given(seeds)
def test_regularity_within_det_ratio_four(seed):
    assert check_regularity_pairs(3, np.random.default_rng(seed)).passed


def test_regularity_coefficient_values():
    assert P.regularity_coefficient(1) == pytest.approx(1 / math.log(2))
    assert P.regularity_coefficient(75) == pytest.approx(75 / math.log(76))


def test_probabilistic_value_bound_grows_with_horizon():
    a = P.probabilistic_value_bound(1.0, 1.0, 10, 100, 0.05)
    b = P.probabilistic_value_bound(1.0, 1.0, 10, 10_000, 0.05)
    assert 0 < a < b
