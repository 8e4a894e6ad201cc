import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import ndtr

from collapselab import asymptotics as asy
from collapselab.models import (
    Ensemble,
    ModelSpec,
    NoiseKind,
    Observation,
    log_kernel_iid,
    psi_cauchy,
    psi_gaussian,
    sample_observation,
    sample_prior,
    spectral_decompose,
)
from collapselab.weights import normalize


def _identity_instance(d, seed, n=50):
    rng = np.random.default_rng(seed)
    model = ModelSpec(d=d)
    obs = sample_observation(model, rng)
    ens = sample_prior(model, n, rng)
    return model, obs, ens, spectral_decompose(model)


class TestStandardizeGaussian:
    def test_centered_particle_scores_zero(self):
        rng = np.random.default_rng(1)
        d = 6
        _, obs, _, spec = _identity_instance(d, 1)
        xi = spec.signal_coords(obs.y)
        w_target = np.sqrt(1.0 + xi**2)
        x = spec.Q[:, :d] @ (spec.lambdas * (xi - w_target))
        std = asy.standardize_gaussian(Ensemble(x[None, :]), obs, spec)
        assert abs(std.scores[0]) < 1e-10

    def test_unit_standardization(self):
        d = 8
        model = ModelSpec(d=d)
        spec = spectral_decompose(model)
        obs = Observation(y=np.zeros(d))
        w_val = math.sqrt((d + math.sqrt(2.0 * d)) / d)
        x = spec.Q[:, :d] @ (-np.full(d, w_val))
        std = asy.standardize_gaussian(Ensemble(x[None, :]), obs, spec)
        assert math.isclose(std.scores[0], 1.0, rel_tol=1e-10)

    def test_affine_identity_general_operator(self):
        rng = np.random.default_rng(2)
        d, q, n = 7, 5, 25
        model = ModelSpec(d=d, q=q, H=rng.standard_normal((d, q)))
        obs = sample_observation(model, rng)
        ens = sample_prior(model, n, rng)
        spec = spectral_decompose(model)
        std = asy.standardize_gaussian(ens, obs, spec)
        qty = spec.Q.T @ obs.y
        orth = float((qty[spec.d_prime :] ** 2).sum())
        resid_sq = ((obs.y - ens.particles @ model.H.T) ** 2).sum(axis=1)
        recon = std.scale * std.scores + std.location + orth
        assert np.allclose(recon, resid_sq, rtol=1e-8)

    def test_weighted_square_identity(self):
        # sum_j lambda_j^2 W_ij^2 == scale * S_i + location
        rng = np.random.default_rng(3)
        d = 5
        model = ModelSpec(d=d, H=np.diag(rng.uniform(0.5, 2.0, size=d)))
        obs = sample_observation(model, rng)
        ens = sample_prior(model, 30, rng)
        spec = spectral_decompose(model)
        std = asy.standardize_gaussian(ens, obs, spec)
        v = (ens.particles @ model.H.T @ spec.Q[:, : spec.d_prime]) / spec.lambdas
        w = std.xi - v
        lhs = (w * w) @ (spec.lambdas**2)
        assert np.allclose(lhs, std.scale * std.scores + std.location, rtol=1e-8)

    def test_argmin_score_is_argmax_weight(self):
        _, obs, ens, spec = _identity_instance(30, 4, n=200)
        std = asy.standardize_gaussian(ens, obs, spec)
        logw = -0.5 * ((obs.y - ens.particles) ** 2).sum(axis=1)
        assert int(np.argmin(std.scores)) == int(np.argmax(logw))


class TestSigmaDprimeSq:
    def test_unit_lambdas_zero_mu(self):
        assert asy.sigma_dprime_sq(np.ones(5), np.zeros(5)) == 2.0

    def test_forced_arithmetic(self):
        # lambda = 1, mu^2 = 2 -> (2/d) * d * (1 + 4) = 10
        mus = np.full(4, math.sqrt(2.0))
        assert math.isclose(asy.sigma_dprime_sq(np.ones(4), mus), 10.0, rel_tol=1e-14)

    def test_random_against_direct_sum(self):
        rng = np.random.default_rng(5)
        lam, xi = rng.uniform(0.5, 2.0, 12), rng.standard_normal(12)
        direct = 2.0 / 12 * sum(lam[j] ** 4 * (1 + 2 * xi[j] ** 2) for j in range(12))
        assert math.isclose(asy.sigma_dprime_sq(lam, xi), direct, rel_tol=1e-12)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            asy.sigma_dprime_sq(np.array([]), np.array([]))


class TestKernelMoments:
    def test_gaussian_closed_form(self):
        for y in (0.0, 1.3, -2.4):
            mu, var = asy.kernel_moments(psi_gaussian, y)
            assert math.isclose(mu, -(y * y + 1.0) / 2.0, abs_tol=1e-8)
            assert math.isclose(var, y * y + 0.5, abs_tol=1e-8)

    def test_zero_kernel(self):
        mu, var = asy.kernel_moments(lambda u: np.zeros_like(u), 0.7)
        assert abs(mu) < 1e-10 and abs(var) < 1e-10

    def test_cauchy_against_mc_oracle(self):
        mu, var = asy.kernel_moments(psi_cauchy, 0.0)
        rng = np.random.default_rng(6)
        v = psi_cauchy(-rng.standard_normal(10_000_000))
        se_mu = v.std() / math.sqrt(v.size)
        assert abs(mu - v.mean()) < 3.0 * se_mu
        centered_sq = (v - v.mean()) ** 2
        se_var = centered_sq.std() / math.sqrt(v.size)
        assert abs(var - v.var()) < 3.0 * se_var

    def test_batch_matches_adaptive(self):
        ys = np.array([-3.0, -0.5, 0.0, 1.0, 4.0])
        mu_b, var_b = asy.batch_kernel_moments(psi_cauchy, ys)
        for i, y in enumerate(ys):
            mu, var = asy.kernel_moments(psi_cauchy, float(y))
            assert math.isclose(mu_b[i], mu, abs_tol=1e-8)
            assert math.isclose(var_b[i], var, abs_tol=1e-8)

    def test_nonintegrable_psi_errors(self):
        with np.errstate(over="ignore"), pytest.raises(asy.QuadratureError):
            asy.kernel_moments(lambda u: np.exp(u * u), 0.0)


class TestStandardizeIid:
    def test_zero_deviation_scores(self):
        # psi_gaussian with y = 0: V_ij = mu(y_j) iff x_ij = +-1
        d = 6
        obs = Observation(y=np.zeros(d))
        x = np.ones((1, d))
        std = asy.standardize_iid(Ensemble(x), obs, psi_gaussian)
        assert abs(std.scores[0]) < 1e-8

    def test_single_deviation(self):
        d, delta = 4, 0.8
        obs = Observation(y=np.zeros(d))
        x = np.ones((1, d))
        x[0, 0] = math.sqrt(1.0 + 2.0 * delta)
        std = asy.standardize_iid(Ensemble(x), obs, psi_gaussian)
        expected = delta / math.sqrt(d * 0.5)
        assert math.isclose(std.scores[0], expected, rel_tol=1e-8)

    def test_affine_identity_and_orientation(self):
        rng = np.random.default_rng(7)
        d, n = 20, 50
        model = ModelSpec(d=d)
        obs = sample_observation(model, rng)
        ens = sample_prior(model, n, rng)
        std = asy.standardize_iid(ens, obs, psi_gaussian)
        logk = log_kernel_iid(obs.y, ens.particles, psi_gaussian)
        assert int(np.argmax(std.scores)) == int(np.argmin(logk))
        # strictly decreasing affine map of the log kernel
        b = math.sqrt(float(std.sigmasq_y.sum()))
        recon = (float(std.mu_y.sum()) - logk) / b
        assert np.allclose(recon, std.scores, rtol=1e-10)

    def test_zero_variance_errors(self):
        obs = Observation(y=np.zeros(3))
        with pytest.raises((ValueError, asy.QuadratureError)):
            asy.standardize_iid(Ensemble(np.ones((2, 3))), obs, lambda u: np.zeros_like(u))


class TestGumbelMinApprox:
    def test_direct_substitution(self):
        # 2 log n = 1
        n = math.exp(0.5)
        g = asy.gumbel_min_approx(n)
        assert math.isclose(g.location, -1.0 + (math.log(0.5) + math.log(4 * math.pi)) / 2.0)
        assert g.scale == 1.0

    def test_mean_strictly_decreasing(self):
        means = [asy.gumbel_min_approx(10**k).mean for k in (2, 3, 4, 5)]
        assert all(a > b for a, b in zip(means, means[1:]))

    def test_mean_against_mc_minimum_oracle(self):
        rng = np.random.default_rng(77)
        n, reps = 10_000, 100_000
        chunks = [rng.standard_normal((500, n)).min(axis=1) for _ in range(reps // 500)]
        mc = float(np.concatenate(chunks).mean())
        assert abs(asy.gumbel_min_approx(n).mean - mc) < 0.1

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            asy.gumbel_min_approx(1)


class TestExpectedTClosedForm:
    def test_direct_substitution(self):
        val = asy.expected_t_normal_closed_form(0.0, 1.0, 1, 2)
        expected = math.exp(0.5) * stats.norm.sf(1.0) * 2.0
        assert math.isclose(val, expected, rel_tol=1e-12)

    def test_dominated_tail(self):
        # value -> 0 as sigma sqrt(d) grows; threshold checked at a typical
        # minimum location (s1 well below -5.2, where the bound is attainable)
        n = 10_000
        vals = [
            asy.expected_t_normal_closed_form(-6.0, c / 10.0, 100, n) for c in (10.0, 30.0, 100.0)
        ]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-8 * (n - 1)

    def test_remark_approximation_ratio(self):
        # ratio to (n-1) exp(-s1^2/2) / (sqrt(2 pi) (s1 + sigma sqrt(d))) -> 1
        n, s1 = 1000, -3.0
        for c in (30.0, 60.0, 120.0):
            closed = asy.expected_t_normal_closed_form(s1, c / 10.0, 100, n)
            remark = (n - 1) * math.exp(-0.5 * s1 * s1) / (math.sqrt(2 * math.pi) * (s1 + c))
            assert abs(closed / remark - 1.0) < 0.05

    def test_no_overflow_in_log_space(self):
        val = asy.expected_t_normal_closed_form(-40.0, 2.0, 10_000, 10**6)
        assert math.isfinite(val)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            asy.expected_t_normal_closed_form(0.0, 1.0, 1, 1)
        with pytest.raises(ValueError):
            asy.expected_t_normal_closed_form(math.inf, 1.0, 1, 10)


class TestGaussianCollapseRate:
    def test_forced_algebra(self):
        sigma_sq, d = 2.5, 40
        n = math.exp(sigma_sq * d / 2.0)
        assert math.isclose(asy.gaussian_collapse_rate(round(n), d, sigma_sq), 1.0, rel_tol=1e-6)

    def test_direct_evaluation(self):
        val = asy.gaussian_collapse_rate(10**5, 100, 10.0)
        assert math.isclose(val, math.sqrt(2 * math.log(1e5) / 1000.0), rel_tol=1e-12)
        assert math.isclose(val, 0.1517, rel_tol=2e-3)

    def test_scaling_law(self):
        base = asy.gaussian_collapse_rate(10**4, 100, 2.0)
        assert math.isclose(asy.gaussian_collapse_rate(10**4, 400, 2.0), base / 2.0, rel_tol=1e-12)

    def test_agrees_with_closed_form_within_factor_two(self):
        n, d, sigma_sq = 10**4, 100, 2.0
        rate = asy.gaussian_collapse_rate(n, d, sigma_sq)
        s1 = asy.gumbel_min_approx(n).mean
        closed = asy.expected_t_normal_closed_form(s1, math.sqrt(sigma_sq), d, n)
        assert 0.5 < closed / rate < 2.0


class TestCauchyPredictors:
    def test_sigma_sq_limit(self):
        assert abs(asy.cauchy_sigma_sq(1e6) - 1.5) < 1e-5

    def test_sigma_sq_forced_arithmetic(self):
        assert math.isclose(asy.cauchy_sigma_sq(1.0), 10.0 / 9.0, rel_tol=1e-14)

    def test_sigma_sq_small_z0(self):
        val = asy.cauchy_sigma_sq(0.1)
        assert math.isclose(val, 406.0 / 10404.0, rel_tol=1e-12)
        # small-z0 approximation sigma(z0) ~ 2 z0
        assert abs(val / (4 * 0.1**2) - 1.0) < 0.03

    def test_sigma_sq_rejects_zero(self):
        with pytest.raises(ValueError):
            asy.cauchy_sigma_sq(0.0)

    def test_predictor_limits(self):
        pred = asy.cauchy_predicted_t(10**4, 100, 1e9)
        r = pred.r_n
        expected = r / (math.sqrt(2 * math.pi) * (r / 4.0 + math.sqrt(6.0) / 4.0))
        assert math.isclose(pred.a, 0.75, abs_tol=1e-9)
        assert math.isclose(pred.b, math.sqrt(6.0) / 4.0, abs_tol=1e-9)
        assert math.isclose(pred.predicted_t, expected, rel_tol=1e-9)

    def test_predictor_vanishes_with_rn(self):
        small = asy.cauchy_predicted_t(100, 10**9, 1.0).predicted_t
        assert small < 1e-3

    def test_monotone_decreasing_in_d(self):
        vals = [asy.cauchy_predicted_t(10**4, d, 1.3).predicted_t for d in (50, 100, 400, 1600)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_chain_quadrature_oracle(self):
        # independent re-derivation: numerically integrate the exponentiated
        # gap kernel against the normal density from sqrt(2 log n), with the
        # same averaged-minimum substitution the closed chain uses
        n, d, z0 = int(400**2.5), 400, 1.0
        pred = asy.cauchy_predicted_t(n, d, z0)
        s2 = pred.sigma_z0_sq
        s = math.sqrt(s2)
        wstar = math.sqrt(2.0 * math.log(n))

        def logq(w):
            return -0.5 * math.sqrt(d) * s * w + 0.25 * s2 * w * w

        c0 = logq(wstar) - 0.5 * wstar * wstar
        val, _ = integrate.quad(
            lambda w: math.exp(logq(w) - 0.5 * w * w - c0), wstar, np.inf, limit=200
        )
        oracle = wstar * math.exp(c0 + 0.5 * wstar**2 - logq(wstar)) * val / math.sqrt(2 * math.pi)
        assert abs(pred.predicted_t / oracle - 1.0) < 0.10

    def test_average_rate_limits(self):
        tiny = asy.average_rate_from_r(0.3, 1e-12)
        assert tiny.value < 1e-11
        eq = asy.average_rate_from_r(0.25, 0.25)
        assert math.isclose(eq.value, 0.25 * math.log(2.0), rel_tol=1e-12)

    def test_average_rate_matches_proxy_in_limit(self):
        res = asy.average_rate_from_r(1e-6, 1.0)
        assert 0.9 < res.value / res.proxy < 1.1

    def test_average_rate_from_model_sizes(self):
        res = asy.cauchy_average_rate(int(400**2.5), 400, 1.0)
        assert math.isclose(res.r_n, math.sqrt(2 * math.log(400**2.5) / 400), rel_tol=1e-9)
        assert res.value > 0 and res.proxy > 0

    @given(
        st.floats(min_value=1e-6, max_value=1e6),
        st.sampled_from([-1.0, 1.0]),
        st.integers(min_value=2, max_value=10**7),
        st.integers(min_value=1, max_value=10**4),
    )
    @settings(max_examples=100, deadline=None)
    def test_predictor_range_invariants(self, mag, sign, n, d):
        pred = asy.cauchy_predicted_t(n, d, sign * mag)
        assert 0.0 < pred.sigma_z0_sq <= 1.5
        assert 0.0 < pred.a <= 0.75
        assert pred.b > 0.0
        assert pred.r_n > 0.0
        assert pred.predicted_t > 0.0


class TestLimitingPosterior:
    def test_substitution(self):
        d = 4
        y = np.full(d, math.sqrt(2.0))  # ||y||^2 = 2d
        post = asy.limiting_posterior_params(y)
        assert np.allclose(post.mean, y / 2.0)
        assert math.isclose(post.var, 0.5)
        assert not post.clamped

    def test_boundary(self):
        y = np.ones(5)  # ||y||^2 = d
        post = asy.limiting_posterior_params(y)
        assert post.var == 0.0 and not post.clamped

    def test_clamping(self):
        y = np.full(4, 0.5)  # ||y||^2 = 1 < d
        post = asy.limiting_posterior_params(y)
        assert post.var == 0.0 and post.clamped

    def test_mean_identity(self):
        rng = np.random.default_rng(8)
        y = rng.standard_normal(7)
        post = asy.limiting_posterior_params(y)
        assert np.allclose(post.mean * (y @ y) / 7.0, y, rtol=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            asy.limiting_posterior_params(np.zeros(3))

    def test_exact_conditional_matches_at_large_d(self):
        # first-coordinate draws from the exact conditional posterior vs the
        # data-only limit, KS over 1e5 draws
        rng = np.random.default_rng(30)
        obs = sample_observation(ModelSpec(d=200, noise_kind=NoiseKind.CAUCHY_MULTIVARIATE), rng)
        z0 = obs.z0
        draws = rng.standard_normal(100_000) / math.sqrt(1 + z0 * z0) + (
            z0 * z0 / (1 + z0 * z0)
        ) * obs.y[0]
        post = asy.limiting_posterior_params(obs.y)
        sd = math.sqrt(post.var)
        ks = stats.kstest(draws, lambda x: ndtr((x - post.mean[0]) / sd)).statistic
        assert ks < 0.05


class TestMomentBounds:
    def test_eq27_exact_moment_vs_bound(self):
        assert asy.abs_moment_normal(4) == pytest.approx(3.0, rel=1e-12)
        for k in range(3, 9):
            assert asy.abs_moment_normal(k) <= asy.abs_moment_bound(k)

    def test_eq28_quadrature_vs_bound(self):
        val3 = asy.abs_central_chisq_moment(3)
        assert math.isclose(val3, 8.0, rel_tol=0.1)  # approximately 8 per coordinate
        for k in range(3, 9):
            assert asy.abs_central_chisq_moment(k) <= asy.abs_central_chisq_bound(k)

    def test_eq29_equal_mu_equality(self):
        d, cap_m = 10, 6.0
        mu = math.sqrt(cap_m / 4.0)
        lhs, rhs = asy.mu_power_sum_bound(np.full(d, mu), cap_m, 4)
        assert math.isclose(lhs, rhs, rel_tol=1e-12)

    def test_basic_check_passes_with_margin(self):
        rng = np.random.default_rng(9)
        rep = asy.moment_bound_check(np.ones(10), np.zeros(10), 3, 200_000, rng)
        assert rep.passed
        # per-coordinate scale: lhs * B^k / d = E|Z^2-1|^3 which is about 8.0
        per_coord = rep.lhs * (10 * rep.sigma_d_sq) ** 1.5 / 10
        assert math.isclose(per_coord, asy.abs_central_chisq_moment(3), rel_tol=0.05)
        assert asy.abs_central_chisq_bound(3) == 256.0
        assert per_coord < 256.0 / 10.0

    def test_small_mc_flag(self):
        rng = np.random.default_rng(10)
        rep = asy.moment_bound_check(np.ones(4), np.zeros(4), 3, 1000, rng)
        assert rep.warn_small_mc

    def test_rejects_low_order(self):
        with pytest.raises(ValueError):
            asy.moment_bound_check(np.ones(3), np.zeros(3), 2, 100, np.random.default_rng(0))

    @given(st.integers(min_value=3, max_value=6), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=12, deadline=None)
    def test_property_over_lambda_mu_grid(self, k, seed):
        rng = np.random.default_rng(seed)
        d = 8
        lam = rng.uniform(0.5, 2.0, size=d)
        mus = rng.standard_normal(d) * rng.uniform(0.0, math.sqrt(2.0))
        rep = asy.moment_bound_check(lam, mus, k, 40_000, rng)
        assert rep.passed


class TestNormalWindowCheck:
    def test_standard_normal_scores(self):
        rng = np.random.default_rng(100)
        rep = asy.normal_window_check(rng.standard_normal(1_000_000), d=100, eta=0.15)
        assert rep.sup_dev < 0.1
        # deviations sit inside the reported binomial bands almost everywhere
        inside = np.maximum(rep.lower_dev, rep.upper_dev) <= rep.band_rel
        assert inside.mean() > 0.95

    def test_refinement_with_dimension(self):
        def scores_for(d, seed, n=200_000):
            rng = np.random.default_rng(seed)
            model = ModelSpec(d=d)
            obs = sample_observation(model, rng)
            ens = sample_prior(model, n, rng)
            return asy.standardize_gaussian(ens, obs, spectral_decompose(model)).scores

        rep_small = asy.normal_window_check(scores_for(20, 21), d=20)
        rep_large = asy.normal_window_check(scores_for(200, 21), d=200)
        w = 20**0.15
        assert rep_large.sup_dev_within(-w, w) < rep_small.sup_dev_within(-w, w)

    def test_constant_scores_error(self):
        with pytest.raises(ValueError, match="degenerate"):
            asy.normal_window_check(np.zeros(20_000), d=50)

    def test_small_sample_rejected(self):
        with pytest.raises(ValueError):
            asy.normal_window_check(np.random.default_rng(0).standard_normal(100), d=10)

    def test_eta_window_validated(self):
        scores = np.random.default_rng(1).standard_normal(20_000)
        with pytest.raises(ValueError):
            asy.normal_window_check(scores, d=10, eta=0.2)
