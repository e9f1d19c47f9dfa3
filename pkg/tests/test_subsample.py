import math

import numpy as np
import pytest
from scipy import stats

from perturbmc.rng import RngStream
from perturbmc.subsample import (ControlVariateCache, DataError, LogPostEstimate,
                                 bias_corrected_loglik, build_cv_cache, differences,
                                 draw_subsample, estimate_logpost, population_sigma2, q_datum,
                                 q_total)
from perturbmc.vonmises import VonMisesDataset, VonMisesModel, find_mode, simulate_dataset
from toy_models import GaussianLocationModel, ScalarData

SMALL_BETA = (0.3, -0.5, 0.8)


class LinearModel(GaussianLocationModel):
    """``l_i(theta) = x_i . theta``: a first-order proxy is already exact."""

    def loglik(self, theta, data, idx=None):
        return self._x(data, idx) @ np.asarray(theta, dtype=float)

    def loglik_grad(self, theta, data, idx=None):
        return self.loglik(theta, data, idx), self._x(data, idx).copy()


def _laplace_draws(setup, count, seed):
    cov = np.linalg.inv(-setup.mode.hessian)
    return RngStream(seed).generator().multivariate_normal(setup.mode.theta, cov, size=count)


# -- cache ------------------------------------------------------------------

def test_single_datum_cache_equals_its_terms():
    data = VonMisesDataset(np.array([0.4]), np.array([[1.0, -0.7]]))
    model = VonMisesModel(2)
    theta = np.array([0.2, 0.1, 0.5])
    cache = build_cv_cache(model, data, theta, 2)
    ll, g, h = model.loglik_grad_hess(theta, data)
    assert cache.sum_loglik == ll[0]
    np.testing.assert_array_equal(cache.sum_grad, g[0])
    np.testing.assert_array_equal(cache.sum_hess, h[0])


def test_cache_matches_direct_sums(vonmises_setup):
    s = vonmises_setup
    cache = build_cv_cache(s.model, s.data, s.mode.theta, 2)
    ll, g, h = s.model.loglik_grad_hess(s.mode.theta, s.data)
    assert cache.sum_loglik == pytest.approx(math.fsum(ll), rel=1e-12)
    np.testing.assert_allclose(cache.sum_grad, g.sum(axis=0), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(cache.sum_hess, h.sum(axis=0), rtol=1e-9)
    assert np.array_equal(cache.sum_hess, cache.sum_hess.T)
    assert q_total(cache, s.mode.theta) == cache.sum_loglik


def test_q_total_matches_per_datum_sum(vonmises_setup):
    s = vonmises_setup
    for order in (1, 2):
        cache = build_cv_cache(s.model, s.data, s.mode.theta, order)
        for theta in _laplace_draws(s, 3, 1):
            per_datum = q_datum(s.model, s.data, s.mode.theta, theta, order)
            assert q_total(cache, theta) == pytest.approx(math.fsum(per_datum), rel=1e-9)


def test_second_order_proxy_exact_on_quadratic_model():
    gen = RngStream(2).generator()
    data = ScalarData(gen.normal(size=(50, 2)))
    model = GaussianLocationModel(dim=2)
    cache = build_cv_cache(model, data, np.array([0.3, -0.1]), 2)
    for theta in gen.normal(scale=3, size=(5, 2)):
        assert q_total(cache, theta) == pytest.approx(model.loglik(theta, data).sum(), rel=1e-12)
        np.testing.assert_allclose(differences(model, data, cache, theta), 0.0, atol=1e-12)


def test_first_order_proxy_exact_on_linear_model():
    gen = RngStream(3).generator()
    data = ScalarData(gen.normal(size=(40, 3)))
    model = LinearModel(dim=3)
    cache = build_cv_cache(model, data, np.zeros(3), 1)
    theta = gen.normal(size=3)
    assert q_total(cache, theta) == pytest.approx(model.loglik(theta, data).sum(), rel=1e-12)
    np.testing.assert_allclose(q_datum(model, data, np.zeros(3), theta, 1),
                               model.loglik(theta, data), rtol=1e-12)


def test_q_datum_at_expansion_point():
    data = simulate_dataset(30, 3, SMALL_BETA, 2.0, 4)
    model = VonMisesModel(3)
    theta_star = np.array([0.2, -0.4, 0.7, 0.6])
    for order in (1, 2):
        np.testing.assert_array_equal(q_datum(model, data, theta_star, theta_star, order),
                                      model.loglik(theta_star, data))
    assert np.all(q_datum(model, data, theta_star, theta_star, 0) == 0)


def test_cache_json_round_trip_and_checksum():
    a = simulate_dataset(100, 3, SMALL_BETA, 2.0, 5)
    b = simulate_dataset(100, 3, SMALL_BETA, 2.0, 6)
    cache = build_cv_cache(VonMisesModel(3), a, np.zeros(4), 2)
    back = ControlVariateCache.from_json(cache.to_json(), data=a)
    assert back.sum_loglik == cache.sum_loglik and back.order == 2
    np.testing.assert_array_equal(back.sum_hess, cache.sum_hess)
    with pytest.raises(DataError):
        ControlVariateCache.from_json(cache.to_json(), data=b)
    with pytest.raises(DataError):
        cache.check_data(simulate_dataset(99, 3, SMALL_BETA, 2.0, 5))
    zero = build_cv_cache(VonMisesModel(3), a, np.zeros(4), 0)
    assert ControlVariateCache.from_json(zero.to_json()).sum_grad is None


def test_cache_reports_nonfinite_datum():
    values = np.zeros((10, 1))
    values[7] = np.nan
    with pytest.raises(DataError, match="datum 7"):
        build_cv_cache(GaussianLocationModel(1), ScalarData(values), np.zeros(1), 2)
    with pytest.raises(ValueError):
        build_cv_cache(GaussianLocationModel(1), ScalarData(np.zeros((3, 1))), np.zeros(1), 3)


# -- estimator --------------------------------------------------------------

def test_full_enumeration_recovers_log_posterior():
    data = simulate_dataset(300, 3, SMALL_BETA, 2.0, 7)
    model = VonMisesModel(3)
    cache = build_cv_cache(model, data, np.zeros(4), 1)
    theta = np.array([0.25, -0.45, 0.75, 0.65])
    est = estimate_logpost(model, data, cache, theta, np.arange(300))
    assert est.value == pytest.approx(model.log_posterior(theta, data), rel=1e-12)
    quad = GaussianLocationModel(dim=2, prior_sd=3.0)
    qdata = ScalarData(RngStream(8).generator().normal(size=(60, 2)))
    qcache = build_cv_cache(quad, qdata, np.zeros(2), 2)
    qest = estimate_logpost(quad, qdata, qcache, np.array([1.0, -2.0]), np.arange(60))
    assert qest.value == pytest.approx(quad.log_posterior(np.array([1.0, -2.0]), qdata), rel=1e-12)
    assert qest.sigma2_hat == pytest.approx(0.0, abs=1e-20)


def test_estimator_deterministic_on_quadratic_model():
    gen = RngStream(9).generator()
    data = ScalarData(gen.normal(size=(500, 2)))
    model = GaussianLocationModel(dim=2)
    cache = build_cv_cache(model, data, np.zeros(2), 2)
    theta = np.array([0.4, 0.2])
    values = {round(estimate_logpost(model, data, cache, theta, draw_subsample(gen, 500, 20)).value,
                    8) for _ in range(20)}
    assert len(values) == 1


def test_estimator_needs_two_indices():
    data = simulate_dataset(10, 3, SMALL_BETA, 2.0, 10)
    cache = build_cv_cache(VonMisesModel(3), data, np.zeros(4), 2)
    with pytest.raises(ValueError):
        estimate_logpost(VonMisesModel(3), data, cache, np.zeros(4), np.array([3]))


def test_bias_correction():
    assert bias_corrected_loglik(LogPostEstimate(-3.0, 0.0, 10)) == -3.0
    assert bias_corrected_loglik(LogPostEstimate(-3.0, 1.5, 10)) == -3.75


def test_estimator_variance_estimate_nonnegative_and_consistent(vonmises_setup):
    s = vonmises_setup
    cache = build_cv_cache(s.model, s.data, s.mode.theta, 2)
    theta = _laplace_draws(s, 1, 11)[0]
    gen = RngStream(12).generator()
    ests = [estimate_logpost(s.model, s.data, cache, theta, draw_subsample(gen, s.data.n, 100))
            for _ in range(4000)]
    s2 = np.array([e.sigma2_hat for e in ests])
    assert np.all(s2 >= 0)
    # the divisor k - 1 makes sigma2_hat unbiased for the population value
    pop = population_sigma2(s.model, s.data, cache, theta, 100)
    assert s2.mean() == pytest.approx(pop, abs=4 * s2.std(ddof=1) / math.sqrt(s2.size))


# -- subsample draws --------------------------------------------------------

def test_single_index_uniform():
    gen = RngStream(13).generator()
    assert draw_subsample(gen, 10, 1).shape == (1,)
    idx = np.concatenate([draw_subsample(gen, 10, 1) for _ in range(100_000)])
    assert stats.chisquare(np.bincount(idx, minlength=10)).pvalue > 0.01
    assert np.all(draw_subsample(gen, 1, 25) == 0)
    with pytest.raises(ValueError):
        draw_subsample(gen, 0, 3)
    with pytest.raises(ValueError):
        draw_subsample(gen, 5, 0)


def test_duplicate_count_matches_birthday_expectation():
    n, k, reps = 100, 50, 10_000
    gen = RngStream(14).generator()
    dups = np.array([k - np.unique(draw_subsample(gen, n, k)).size for _ in range(reps)])
    expected = k - n * (1 - (1 - 1 / n) ** k)
    assert dups.mean() == pytest.approx(expected, abs=3 * dups.std(ddof=1) / math.sqrt(reps))


# -- population variance ----------------------------------------------------

def test_population_sigma2_formula_properties(vonmises_setup):
    s = vonmises_setup
    cache = build_cv_cache(s.model, s.data, s.mode.theta, 2)
    theta = _laplace_draws(s, 1, 15)[0]
    a = population_sigma2(s.model, s.data, cache, theta, 100)
    assert a > 0
    assert population_sigma2(s.model, s.data, cache, theta, 200) == pytest.approx(a / 2, rel=1e-14)
    # every d_i vanishes at the expansion point
    assert population_sigma2(s.model, s.data, cache, s.mode.theta, 100) == 0.0
    quad = GaussianLocationModel(dim=1)
    qdata = ScalarData(RngStream(16).generator().normal(size=(100, 1)))
    qcache = build_cv_cache(quad, qdata, np.zeros(1), 2)
    assert population_sigma2(quad, qdata, qcache, np.array([2.0]), 10) == pytest.approx(
        0.0, abs=1e-20)


def test_variance_ordering_across_control_variates(vonmises_setup):
    s = vonmises_setup
    caches = [build_cv_cache(s.model, s.data, s.mode.theta, order) for order in (2, 1, 0)]
    for theta in _laplace_draws(s, 20, 17):
        v2, v1, v0 = (population_sigma2(s.model, s.data, c, theta, 100) for c in caches)
        assert v2 <= v1 <= v0


def _slope(ns, values):
    return np.polyfit(np.log(ns), np.log(values), 1)[0]


def test_no_control_variate_variance_grows_like_n_squared():
    truth = np.array([*SMALL_BETA, math.log(2.0)])
    model = VonMisesModel(3)
    ns = [1_000, 10_000, 100_000]
    values = []
    for n in ns:
        data = simulate_dataset(n, 3, SMALL_BETA, 2.0, RngStream(18, n))
        cache = build_cv_cache(model, data, truth, 0)
        values.append(population_sigma2(model, data, cache, truth, 100))
    assert _slope(ns, values) == pytest.approx(2.0, abs=0.2)


def test_second_order_variance_shrinks_like_one_over_n():
    model = VonMisesModel(3)
    ns = [2_500, 10_000, 40_000]
    direction = np.array([1.0, -1.0, 1.0, -1.0]) / 2
    values = []
    for n in ns:
        data = simulate_dataset(n, 3, SMALL_BETA, 2.0, RngStream(19, n))
        mode = find_mode(model, data)
        sd = np.sqrt(np.diag(np.linalg.inv(-mode.hessian)))
        cache = build_cv_cache(model, data, mode.theta, 2)
        # one posterior standard deviation out, where the Taylor remainder is typical
        values.append(population_sigma2(model, data, cache, mode.theta + direction * sd, 100))
    assert _slope(ns, values) == pytest.approx(-1.0, abs=0.5)
