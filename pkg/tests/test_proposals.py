import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from divopt import (
    BernoulliParams,
    GaussianParams,
    MixtureParams,
    StudentParams,
    gamma_factor,
    gaussian_kl,
    log_density,
    moment_embed,
    moment_unembed,
    params_from_dict,
    params_to_dict,
    responsibilities,
    sample,
)
from divopt.errors import DomainError, FactorizationError
from divopt.proposals import bernoulli_kl, chol_with_jitter, family_kl, sufficient_statistics


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


class TestLogDensity:
    def test_standard_gaussian_origin(self):
        p = GaussianParams(mean=[0.0], cov=[[1.0]])
        assert log_density(p, [[0.0]])[0] == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_cauchy_origin(self):
        p = StudentParams(location=[0.0], scale=[[1.0]], dof=1.0)
        assert log_density(p, [[0.0]])[0] == pytest.approx(-math.log(math.pi))

    def test_gaussian_against_scipy(self):
        rng = np.random.default_rng(1)
        cov = random_spd(rng, 3)
        mean = rng.standard_normal(3)
        p = GaussianParams(mean=mean, cov=cov)
        x = rng.standard_normal((20, 3))
        ref = stats.multivariate_normal(mean, cov).logpdf(x)
        np.testing.assert_allclose(log_density(p, x), ref, rtol=1e-10)

    def test_student_1d_against_scipy(self):
        p = StudentParams(location=[0.7], scale=[[2.25]], dof=3.0)
        x = np.linspace(-6, 8, 25).reshape(-1, 1)
        ref = stats.t(df=3.0, loc=0.7, scale=1.5).logpdf(x.ravel())
        np.testing.assert_allclose(log_density(p, x), ref, rtol=1e-10)

    def test_student_multivariate_against_scipy(self):
        rng = np.random.default_rng(2)
        scale = random_spd(rng, 2)
        loc = np.array([0.5, -1.0])
        p = StudentParams(location=loc, scale=scale, dof=4.0)
        x = rng.standard_normal((15, 2)) * 3
        ref = stats.multivariate_t(loc, scale, df=4.0).logpdf(x)
        np.testing.assert_allclose(log_density(p, x), ref, rtol=1e-10)

    def test_student_approaches_gaussian(self):
        scale = np.array([[2.0, 0.3], [0.3, 1.0]])
        loc = np.array([0.1, -0.4])
        heavy = StudentParams(location=loc, scale=scale, dof=1e6)
        gauss = GaussianParams(mean=loc, cov=scale)
        x = np.array([[0.0, 0.0], [1.0, 2.0], [-2.0, 0.5]])
        np.testing.assert_allclose(log_density(heavy, x), log_density(gauss, x),
                                   atol=2e-5)

    def test_mixture_density_quadrature(self):
        mix = MixtureParams(
            weights=[0.3, 0.7],
            components=(GaussianParams(mean=[-2.0], cov=[[0.5]]),
                        StudentParams(location=[3.0], scale=[[1.0]], dof=2.0)))
        total, err = integrate.quad(
            lambda u: math.exp(log_density(mix, [[u]])[0]), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=max(1e-8, 3 * err))

    def test_mixture_is_weighted_sum(self):
        c1 = GaussianParams(mean=[0.0], cov=[[1.0]])
        c2 = GaussianParams(mean=[5.0], cov=[[2.0]])
        mix = MixtureParams(weights=[0.25, 0.75], components=(c1, c2))
        x = np.array([[0.5], [4.0]])
        direct = np.log(0.25 * np.exp(log_density(c1, x))
                        + 0.75 * np.exp(log_density(c2, x)))
        np.testing.assert_allclose(log_density(mix, x), direct, rtol=1e-12)

    def test_bernoulli_pointmass(self):
        p = BernoulliParams(probs=[0.25, 0.5, 0.5], p_min=1e-3)
        val = log_density(p, [[1.0, 0.0, 1.0]])[0]
        assert val == pytest.approx(math.log(0.25 * 0.5 * 0.5))

    def test_bernoulli_sums_to_one(self):
        p = BernoulliParams(probs=[0.2, 0.8, 0.4])
        pts = np.array([[(i >> k) & 1 for k in range(3)] for i in range(8)], dtype=float)
        assert np.sum(np.exp(log_density(p, pts))) == pytest.approx(1.0)


class TestSampling:
    def test_gaussian_moments(self):
        rng = np.random.default_rng(7)
        cov = np.array([[2.0, 0.8], [0.8, 1.0]])
        mean = np.array([1.0, -2.0])
        x = sample(GaussianParams(mean=mean, cov=cov), rng, 40000)
        np.testing.assert_allclose(x.mean(axis=0), mean, atol=0.05)
        np.testing.assert_allclose(np.cov(x.T), cov, atol=0.08)

    def test_cauchy_tail_mass(self):
        # P(|X| > t) = 1 - (2/pi) arctan(t) for a standard Cauchy
        rng = np.random.default_rng(11)
        x = sample(StudentParams(location=[0.0], scale=[[1.0]], dof=1.0),
                   rng, 200000).ravel()
        for t in (1.0, 5.0, 20.0):
            p = 1.0 - (2.0 / math.pi) * math.atan(t)
            emp = np.mean(np.abs(x) > t)
            se = math.sqrt(p * (1 - p) / x.size)
            assert abs(emp - p) < 3 * se + 1e-12

    def test_student_moments_heavyish(self):
        # dof=5 has finite covariance nu/(nu-2) * Sigma
        rng = np.random.default_rng(13)
        x = sample(StudentParams(location=[2.0], scale=[[1.0]], dof=5.0), rng, 200000)
        assert x.mean() == pytest.approx(2.0, abs=0.02)
        assert x.var() == pytest.approx(5.0 / 3.0, abs=0.12)

    def test_mixture_component_fractions(self):
        rng = np.random.default_rng(17)
        mix = MixtureParams(weights=[0.2, 0.8],
                            components=(GaussianParams(mean=[-10.0], cov=[[0.1]]),
                                        GaussianParams(mean=[10.0], cov=[[0.1]])))
        x = sample(mix, rng, 20000).ravel()
        assert np.mean(x < 0) == pytest.approx(0.2, abs=0.01)

    def test_bernoulli_frequencies(self):
        rng = np.random.default_rng(19)
        p = BernoulliParams(probs=[0.1, 0.9], p_min=1e-6)
        x = sample(p, rng, 50000)
        assert set(np.unique(x)) <= {0.0, 1.0}
        np.testing.assert_allclose(x.mean(axis=0), [0.1, 0.9], atol=0.01)

    def test_n_zero_rejected(self):
        with pytest.raises(DomainError):
            sample(GaussianParams(mean=[0.0], cov=[[1.0]]), np.random.default_rng(0), 0)


class TestDivergences:
    def test_self_kl_zero(self):
        p = GaussianParams(mean=[1.0, 2.0], cov=[[2.0, 0.1], [0.1, 1.0]])
        assert gaussian_kl(p, p) == 0.0

    def test_mean_shift_example(self):
        # KL(N(0,1) || N(1,1)) = 1/2
        a = GaussianParams(mean=[0.0], cov=[[1.0]])
        b = GaussianParams(mean=[1.0], cov=[[1.0]])
        assert gaussian_kl(a, b) == pytest.approx(0.5)

    def test_variance_example(self):
        # KL(N(0,1) || N(0,4)) = (1/2)(1/4 - 1 + ln 4)
        a = GaussianParams(mean=[0.0], cov=[[1.0]])
        b = GaussianParams(mean=[0.0], cov=[[4.0]])
        assert gaussian_kl(a, b) == pytest.approx(0.5 * (0.25 - 1.0 + math.log(4.0)))

    def test_gaussian_kl_monte_carlo(self):
        rng = np.random.default_rng(23)
        a = GaussianParams(mean=[0.5, -0.5], cov=random_spd(rng, 2))
        b = GaussianParams(mean=[0.0, 1.0], cov=random_spd(rng, 2))
        x = sample(a, rng, 100000)
        g = log_density(a, x) - log_density(b, x)
        se = g.std() / math.sqrt(x.shape[0])
        assert abs(g.mean() - gaussian_kl(a, b)) < 3 * se

    def test_bernoulli_kl_example(self):
        a = BernoulliParams(probs=[0.5], p_min=1e-9)
        b = BernoulliParams(probs=[0.25], p_min=1e-9)
        want = 0.5 * math.log(2.0) + 0.5 * math.log(0.5 / 0.75)
        assert bernoulli_kl(a, b) == pytest.approx(want)

    def test_bernoulli_kl_additive(self):
        a = BernoulliParams(probs=[0.3, 0.6], p_min=1e-9)
        b = BernoulliParams(probs=[0.5, 0.5], p_min=1e-9)
        parts = sum(bernoulli_kl(BernoulliParams(probs=[pa], p_min=1e-9),
                                 BernoulliParams(probs=[pb], p_min=1e-9))
                    for pa, pb in zip(a.probs, b.probs))
        assert bernoulli_kl(a, b) == pytest.approx(parts)

    def test_family_kl_rejects_student(self):
        s = StudentParams(location=[0.0], scale=[[1.0]], dof=2.0)
        with pytest.raises(DomainError):
            family_kl(s, s)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 4), st.floats(0.2, 4))
    @settings(max_examples=60, deadline=None)
    def test_kl_nonnegative(self, m1, m2, v1, v2):
        a = GaussianParams(mean=[m1], cov=[[v1]])
        b = GaussianParams(mean=[m2], cov=[[v2]])
        assert gaussian_kl(a, b) >= 0.0


class TestMomentCoordinates:
    def test_gaussian_roundtrip(self):
        rng = np.random.default_rng(29)
        p = GaussianParams(mean=rng.standard_normal(3), cov=random_spd(rng, 3))
        back = moment_unembed(moment_embed(p))
        np.testing.assert_allclose(back.mean, p.mean, rtol=1e-12)
        np.testing.assert_allclose(back.cov, p.cov, rtol=1e-10, atol=1e-12)

    def test_bernoulli_roundtrip(self):
        p = BernoulliParams(probs=[0.2, 0.7, 0.5])
        back = moment_unembed(moment_embed(p))
        np.testing.assert_allclose(back.probs, p.probs)

    def test_embed_values(self):
        p = GaussianParams(mean=[1.0], cov=[[2.0]])
        m = moment_embed(p)
        assert m.first[0] == 1.0 and m.second[0, 0] == 3.0

    def test_sufficient_statistics_match_embed_under_sampling(self):
        # the weighted mean of per-point statistics estimates the embedding
        rng = np.random.default_rng(31)
        p = GaussianParams(mean=[0.5, -1.0], cov=random_spd(rng, 2))
        x = sample(p, rng, 60000)
        stats_ = sufficient_statistics(p, x)
        m = moment_embed(p)
        np.testing.assert_allclose(stats_.first.mean(axis=0), m.first, atol=0.05)
        np.testing.assert_allclose(stats_.second.mean(axis=0), m.second, atol=0.12)

    def test_unembed_rejects_unknown_family(self):
        from divopt.proposals import MomentParams

        with pytest.raises(DomainError):
            moment_unembed(MomentParams(first=np.array([0.5]), family="poisson"))


class TestMixtureStudentHelpers:
    def test_responsibilities_sum_to_one(self):
        mix = MixtureParams(weights=[0.5, 0.5],
                            components=(GaussianParams(mean=[-1.0], cov=[[1.0]]),
                                        GaussianParams(mean=[1.0], cov=[[1.0]])))
        r = responsibilities(mix, np.linspace(-4, 4, 9).reshape(-1, 1))
        np.testing.assert_allclose(r.sum(axis=1), 1.0, rtol=1e-12)

    def test_responsibilities_symmetric_midpoint(self):
        mix = MixtureParams(weights=[0.5, 0.5],
                            components=(GaussianParams(mean=[-1.0], cov=[[1.0]]),
                                        GaussianParams(mean=[1.0], cov=[[1.0]])))
        r = responsibilities(mix, [[0.0]])
        np.testing.assert_allclose(r[0], [0.5, 0.5])

    def test_responsibilities_far_tail_no_underflow(self):
        # at x = 60 both component densities underflow exp() but the log-space
        # path still attributes the point to the nearer component
        mix = MixtureParams(weights=[0.5, 0.5],
                            components=(GaussianParams(mean=[0.0], cov=[[1.0]]),
                                        GaussianParams(mean=[1.0], cov=[[1.0]])))
        r = responsibilities(mix, [[60.0]])
        assert r[0, 1] > 0.999999

    def test_gamma_factor_center_and_example(self):
        s = StudentParams(location=[0.0, 0.0], scale=np.eye(2), dof=4.0)
        np.testing.assert_allclose(gamma_factor(s, [[0.0, 0.0]]), [(4 + 2) / 4])
        # Mahalanobis^2 = 4 at (2, 0): (nu + d)/(nu + 4) = 6/8
        np.testing.assert_allclose(gamma_factor(s, [[2.0, 0.0]]), [0.75])

    def test_gamma_factor_decreasing_in_radius(self):
        s = StudentParams(location=[0.0], scale=[[1.0]], dof=3.0)
        g = gamma_factor(s, np.array([[0.0], [1.0], [2.0], [10.0]]))
        assert np.all(np.diff(g) < 0)


class TestConstructionAndSerialization:
    def test_bernoulli_clamping(self):
        p = BernoulliParams(probs=[0.0, 1.0, 0.5, 0.2])
        floor = 1.0 / 16.0
        np.testing.assert_allclose(p.probs, [floor, 1 - floor, 0.5, 0.2])

    def test_mixture_weight_normalization(self):
        mix = MixtureParams(weights=[1.0, 3.0],
                            components=(GaussianParams(mean=[0.0], cov=[[1.0]]),) * 2)
        np.testing.assert_allclose(mix.weights, [0.25, 0.75])

    def test_mixture_negative_weight_rejected(self):
        with pytest.raises(DomainError):
            MixtureParams(weights=[-0.1, 1.1],
                          components=(GaussianParams(mean=[0.0], cov=[[1.0]]),) * 2)

    def test_bad_shapes_rejected(self):
        with pytest.raises(DomainError):
            GaussianParams(mean=[0.0, 0.0], cov=[[1.0]])
        with pytest.raises(DomainError):
            StudentParams(location=[0.0], scale=[[1.0]], dof=-1.0)

    def test_roundtrip_all_families(self):
        rng = np.random.default_rng(37)
        cases = [
            GaussianParams(mean=[1.0, 2.0], cov=random_spd(rng, 2)),
            StudentParams(location=[0.5], scale=[[2.0]], dof=3.5),
            BernoulliParams(probs=[0.2, 0.8, 0.5]),
            MixtureParams(weights=[0.4, 0.6],
                          components=(StudentParams(location=[0.0], scale=[[1.0]], dof=1.0),
                                      StudentParams(location=[2.0], scale=[[0.5]], dof=2.0))),
        ]
        for p in cases:
            q = params_from_dict(params_to_dict(p))
            x = np.zeros((3, p.dim)) + np.linspace(0, 1, 3)[:, None]
            np.testing.assert_allclose(log_density(q, x), log_density(p, x))

    def test_from_dict_unknown_family(self):
        with pytest.raises(DomainError):
            params_from_dict({"family": "laplace"})


class TestCholJitter:
    def test_clean_matrix_untouched(self):
        s = np.array([[4.0, 0.0], [0.0, 9.0]])
        np.testing.assert_allclose(chol_with_jitter(s), [[2.0, 0.0], [0.0, 3.0]])

    def test_tiny_negative_eigenvalue_repaired(self):
        s = np.eye(2)
        s[1, 1] = -1e-12
        ch = chol_with_jitter(s)
        rebuilt = ch @ ch.T
        np.testing.assert_allclose(rebuilt, s, atol=1e-3)
        assert rebuilt[1, 1] >= 0.0

    def test_hard_indefinite_raises(self):
        with pytest.raises(FactorizationError):
            chol_with_jitter(np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_asymmetric_raises(self):
        with pytest.raises(FactorizationError):
            chol_with_jitter(np.array([[1.0, 0.5], [0.0, 1.0]]))
