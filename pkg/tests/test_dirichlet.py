import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import gammaln

from bayesdens.core import (
    NormalDensity,
    PosteriorGrid,
    Sample,
    concentrated_lattice,
    default_lattice,
    normal_family,
    parametric_posterior,
    quadrature,
)
from bayesdens.dirichlet import (
    BinnedData,
    ControlSets,
    DirichletPrior,
    ResidualFit,
    binned_estimate,
    dp_estimate,
    dp_posterior_variance,
    pinned_estimate,
    pinned_log_m,
    pinned_posterior,
    pinned_quantile_estimate,
    pinned_residual_density,
    predictive_convolved,
    prior_weight,
    residual_bandwidths,
    residual_density,
    semiparam_estimate,
    semiparam_posterior,
    variable_kernel_density,
)
from bayesdens.errors import ControlBoundaryError, DegeneratePosteriorError, DomainError, OutOfSupportError
from bayesdens.kernels import GAUSSIAN, KERNELS, UNIFORM, YEPANECHNIKOV, convolve, kde

NAMES = ["uniform", "gaussian", "yepanechnikov"]


def point_mass(mu, sigma):
    return PosteriorGrid((np.array([mu]), np.array([sigma])), np.array([[1.0]]), ("mu", "sigma"))


class TestPriorWeight:
    def test_values(self):
        assert prior_weight(0.0, 10) == 0.0
        assert prior_weight(5.0, 5) == 0.5
        assert prior_weight(3.0, 0) == 1.0

    @given(st.floats(0.01, 1e4), st.integers(0, 10_000))
    def test_monotone(self, a, n):
        w = prior_weight(a, n)
        assert prior_weight(a, n + 1) < w
        assert prior_weight(a * 1.5, n) > w or n == 0


class TestBinned:
    def data(self, counts):
        return BinnedData(np.array([0.0, 1.0, 2.0]), np.array(counts), np.array([0.5, 0.5]))

    def test_worked_example(self):
        assert binned_estimate(2.0, self.data([3, 1]), 0.5) == pytest.approx(4.0 / 6.0)

    def test_histogram_limit(self):
        d = self.data([3, 1])
        assert binned_estimate(0.0, d, 1.5) == pytest.approx(0.25)

    def test_prior_when_empty(self):
        assert binned_estimate(2.0, self.data([0, 0]), 0.5) == pytest.approx(0.5)

    def test_outside(self):
        with pytest.raises(OutOfSupportError):
            binned_estimate(1.0, self.data([1, 1]), 2.5)

    def test_from_sample_counts(self):
        d = BinnedData.from_sample([0.1, 0.2, 1.5, 2.0], [0.0, 1.0, 2.0])
        assert d.counts.tolist() == [2, 2]

    def test_uniform_kernel_moving_cell_agrees(self):
        # dp with the uniform kernel is the moving-cell histogram smoothed by the prior
        x = np.array([0.1, 0.3, 0.35, 0.8])
        f0 = stats.uniform(-5, 10)
        prior = DirichletPrior(2.0, lambda t: f0.pdf(t))
        val = dp_estimate(prior, x, UNIFORM, 0.5, 0.3)
        cell = np.sum(np.abs(x - 0.3) <= 0.25)
        expect = (2.0 * 0.1 * 0.5 + cell) / ((2.0 + 4) * 0.5)
        assert val == pytest.approx(expect, abs=1e-12)


class TestDpEstimate:
    @pytest.mark.parametrize("name", NAMES)
    def test_a_zero_equals_kde(self, name, normal200):
        x = np.linspace(-3, 3, 101)
        prior = DirichletPrior(0.0, NormalDensity())
        np.testing.assert_array_equal(dp_estimate(prior, normal200, name, 0.4, x),
                                      kde(normal200, name, 0.4, x))

    def test_huge_a(self, normal200):
        x = np.linspace(-3, 3, 11)
        f0 = NormalDensity(0.5, 2.0)
        est = dp_estimate(DirichletPrior(1e12, f0), normal200, GAUSSIAN, 0.4, x)
        np.testing.assert_allclose(est, convolve(f0, GAUSSIAN, 0.4, x), atol=1e-9)

    def test_midpoint(self, normal200):
        x = np.linspace(-3, 3, 11)
        f0 = NormalDensity()
        est = dp_estimate(DirichletPrior(200.0, f0), normal200, YEPANECHNIKOV, 0.5, x)
        mid = 0.5 * (convolve(f0, YEPANECHNIKOV, 0.5, x) + kde(normal200, YEPANECHNIKOV, 0.5, x))
        np.testing.assert_allclose(est, mid, rtol=1e-12)

    @given(st.floats(0, 1e3), st.floats(-4, 4), st.sampled_from(NAMES))
    def test_convex_combination(self, a, x0, name):
        data = np.random.default_rng(11).normal(size=40)
        f0 = NormalDensity(1.0, 0.7)
        est = dp_estimate(DirichletPrior(a, f0), data, name, 0.6, x0)
        lo_hi = sorted([convolve(f0, name, 0.6, x0), kde(data, name, 0.6, x0)])
        assert lo_hi[0] - 1e-12 <= est <= lo_hi[1] + 1e-12

    def test_unit_integral(self, normal200):
        prior = DirichletPrior(30.0, NormalDensity(0.3, 1.2))
        f = lambda t: dp_estimate(prior, normal200, GAUSSIAN, 0.3, t)  # noqa: E731
        assert quadrature(f, -15, 15) == pytest.approx(1.0, abs=1e-8)


class TestPosteriorVariance:
    def test_worked_example(self):
        v = dp_posterior_variance(DirichletPrior(1.0, NormalDensity()), [0.0], UNIFORM, 1.0, 0.0)
        assert v == pytest.approx(1.0 / 6.0)

    def test_empty_neighbourhood(self):
        v = dp_posterior_variance(DirichletPrior(1.0, NormalDensity()), [10.0, 11.0], UNIFORM, 1.0, 0.0)
        assert v == 0.0

    def test_decreases_with_n(self):
        rng = np.random.default_rng(12)
        prior = DirichletPrior(2.0, NormalDensity())
        vals = [dp_posterior_variance(prior, rng.normal(size=n), GAUSSIAN, 0.5, 0.0)
                for n in (100, 1000, 10000)]
        assert vals[0] > vals[1] > vals[2]


class TestSemiparam:
    def test_distinct_data_matches_parametric(self):
        x = Sample([-1.2, 0.3, 0.8, 2.0])
        lat = default_lattice(x, size=31)
        a = semiparam_posterior(normal_family(), x, lattice=lat)
        b = parametric_posterior(normal_family(), x, lattice=lat)
        np.testing.assert_array_equal(a.masses, b.masses)

    def test_duplicates_ignored(self):
        lat = (np.linspace(-2, 3, 21), np.linspace(0.2, 3, 21))
        a = semiparam_posterior(normal_family(), [1.0, 1.0, 0.0], lattice=lat)
        b = semiparam_posterior(normal_family(), [1.0, 0.0], lattice=lat)
        np.testing.assert_array_equal(a.masses, b.masses)

    def test_symmetric_mode(self):
        lat = (np.linspace(-3, 3, 61), np.linspace(0.2, 4, 40))
        post = semiparam_posterior(normal_family(), [-1.0, 1.0], lattice=lat)
        i, _ = np.unravel_index(np.argmax(post.masses), post.masses.shape)
        assert lat[0][i] == pytest.approx(0.0, abs=1e-12)

    def test_degenerate(self):
        lat = (np.linspace(-1, 1, 5), np.linspace(0.5, 2, 5))
        with pytest.raises(DegeneratePosteriorError):
            semiparam_posterior(normal_family(), [0.0, 1.0], lattice=lat,
                                log_prior=lambda m, s: np.full(np.broadcast(m, s).shape, -np.inf))

    def test_point_mass_reduces_to_dp(self, normal200):
        x = np.linspace(-3, 3, 13)
        fam = normal_family()
        est = semiparam_estimate(5.0, fam, point_mass(0.2, 1.1), normal200, GAUSSIAN, 0.4, x)
        ref = dp_estimate(DirichletPrior(5.0, NormalDensity(0.2, 1.1)), normal200, GAUSSIAN, 0.4, x)
        np.testing.assert_allclose(est, ref, rtol=1e-12)

    def test_point_mass_nongaussian_kernel(self, normal200):
        x = np.linspace(-2, 2, 5)
        fam = normal_family()
        est = semiparam_estimate(5.0, fam, point_mass(0.2, 1.1), normal200, "yepanechnikov", 0.4, x)
        ref = dp_estimate(DirichletPrior(5.0, NormalDensity(0.2, 1.1)), normal200, "yepanechnikov", 0.4, x)
        np.testing.assert_allclose(est, ref, rtol=1e-10)

    def test_a_zero(self, normal200):
        fam = normal_family()
        post = semiparam_posterior(fam, normal200)
        x = np.linspace(-2, 2, 9)
        np.testing.assert_array_equal(semiparam_estimate(0.0, fam, post, normal200, GAUSSIAN, 0.3, x),
                                      kde(normal200, GAUSSIAN, 0.3, x))

    def test_concentration(self):
        x = np.random.default_rng(13).standard_normal(10_000)
        fam = normal_family()
        post = semiparam_posterior(fam, x, lattice=concentrated_lattice(x, size=41))
        t = np.linspace(-2, 2, 9)
        pred = predictive_convolved(fam, post, GAUSSIAN, 0.4, t)
        np.testing.assert_allclose(pred, convolve(NormalDensity(), GAUSSIAN, 0.4, t), atol=0.01)


class TestResidual:
    def test_single_residual(self):
        fit = ResidualFit(0.0, 1.0, np.array([0.0]), np.array([0.1]))
        val = residual_density(0.0, normal_family(), [0.0], None, 0.0, fit=fit)
        assert val == pytest.approx(10 / math.sqrt(2 * math.pi), rel=1e-12)

    @pytest.mark.parametrize("rule", ["standardized", "delta"])
    def test_fixed_sigma_equal_bandwidths(self, rule, normal200):
        s = Sample(normal200)
        lat = (np.linspace(-1, 1, 201), np.array([1.0]))
        post = semiparam_posterior(normal_family(), s, lattice=lat)
        fit = residual_bandwidths(s, post, rule)
        assert np.ptp(fit.bandwidths) < 1e-12
        if rule == "standardized":
            assert fit.bandwidths[0] == pytest.approx(1 / math.sqrt(s.n))

    def test_more_smoothing_in_tails(self, normal200):
        s = Sample(normal200)
        fit = residual_bandwidths(s, semiparam_posterior(normal_family(), s), "standardized")
        order = np.argsort(np.abs(fit.residuals))
        assert fit.bandwidths[order[-1]] > fit.bandwidths[order[0]]

    @pytest.mark.parametrize("rule", ["standardized", "delta"])
    def test_unit_integral(self, rule, normal200):
        fam = normal_family()
        post = semiparam_posterior(fam, normal200)
        fit = residual_bandwidths(normal200, post, rule)
        f = lambda y: residual_density(3.0, fam, normal200, post, y, fit=fit)  # noqa: E731
        assert quadrature(f, -12, 12) == pytest.approx(1.0, abs=1e-8)

    def test_variable_kernel_rejects_zero_bandwidth(self):
        with pytest.raises(DomainError):
            variable_kernel_density(0.0, [0.0], [0.0])


def brute_pinned_logpost(x, a, cuts, z, mu_axis, sigma_axis):
    x = np.asarray(x, dtype=float)
    d = np.unique(x)
    out = np.empty((mu_axis.size, sigma_axis.size))
    for i, mu in enumerate(mu_axis):
        for j, sg in enumerate(sigma_axis):
            ll = stats.norm.logpdf(d, mu, sg).sum()
            e = (x - mu) / sg
            edges = np.concatenate([[-np.inf], cuts, [np.inf]])
            counts = [np.sum((e > lo) & (e <= hi)) for lo, hi in zip(edges[:-1], edges[1:])]
            lm = sum(c * math.log(zz) - gammaln(a * zz + c) for c, zz in zip(counts, z))
            out[i, j] = ll + lm
    return out


class TestPinned:
    def test_single_set_is_dp(self, normal200):
        x = np.linspace(-3, 3, 101)
        f0 = NormalDensity(0.1, 1.3)
        prior = DirichletPrior(7.0, f0)
        a = pinned_estimate(prior, ControlSets.whole_line(), normal200, GAUSSIAN, 0.4, x)
        b = dp_estimate(prior, normal200, GAUSSIAN, 0.4, x)
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)

    def test_a_zero_correction(self, normal200):
        cs = ControlSets(np.array([0.0]), np.array([0.3, 0.7]))
        x = np.array([-1.0, 0.5])
        est = pinned_estimate(DirichletPrior(0.0, NormalDensity()), cs, normal200, GAUSSIAN, 0.4, x)
        frac = np.array([np.mean(normal200 <= 0), np.mean(normal200 > 0)])
        fn = kde(normal200, GAUSSIAN, 0.4, x)
        np.testing.assert_allclose(est, np.array([0.3, 0.7]) * fn / frac, rtol=1e-12)

    def test_matching_masses(self):
        data = np.array([-2.0, -1.0, 1.0, 2.0])
        cs = ControlSets(np.array([0.0]), np.array([0.5, 0.5]))
        x = np.array([-1.5, 0.7])
        est = pinned_estimate(DirichletPrior(0.0, NormalDensity()), cs, data, GAUSSIAN, 0.5, x)
        np.testing.assert_allclose(est, kde(data, GAUSSIAN, 0.5, x), rtol=1e-13)

    def test_boundary_rejected(self, normal200):
        cs = ControlSets(np.array([0.0]), np.array([0.5, 0.5]))
        with pytest.raises(ControlBoundaryError):
            pinned_estimate(DirichletPrior(1.0, NormalDensity()), cs, normal200, GAUSSIAN, 0.4, 0.0)

    def test_control_validation(self):
        with pytest.raises(DomainError):
            ControlSets(np.array([0.0]), np.array([0.4, 0.4]))
        with pytest.raises(DomainError):
            ControlSets(np.array([1.0, 0.0]), np.array([0.2, 0.3, 0.5]))

    def test_single_set_posterior_is_semiparam(self, normal200):
        fam = normal_family()
        lat = default_lattice(normal200, size=41)
        a = pinned_posterior(3.0, ControlSets.whole_line(), fam, normal200, lattice=lat)
        b = semiparam_posterior(fam, normal200, lattice=lat)
        np.testing.assert_allclose(a.masses, b.masses, atol=1e-13)

    def test_brute_force_lattice(self):
        x = np.array([-1.3, -0.2, 0.1, 0.4, 0.4, 1.7, 2.2])
        mu_axis = np.linspace(-1.5, 1.5, 17)
        sg_axis = np.linspace(0.3, 3.0, 13)
        cuts, z = np.array([0.0]), np.array([0.5, 0.5])
        post = pinned_posterior(2.0, ControlSets(cuts, z), normal_family(), x,
                                lattice=(mu_axis, sg_axis))
        lw = brute_pinned_logpost(x, 2.0, cuts, z, mu_axis, sg_axis)
        ref = np.exp(lw - lw.max())
        np.testing.assert_allclose(post.masses, ref / ref.sum(), atol=1e-12)

    def test_median_pinning_shifts_mode(self):
        # skewed data: the pinned posterior pulls mu toward the sample median
        x = np.random.default_rng(3).exponential(size=60)
        fam = normal_family()
        lat = default_lattice(x, size=81)
        plain = semiparam_posterior(fam, x, lattice=lat).mean()[0]
        pinned = pinned_posterior(1.0, ControlSets(np.array([0.0]), np.array([0.5, 0.5])),
                                  fam, x, lattice=lat).mean()[0]
        assert abs(pinned - np.median(x)) < abs(plain - np.median(x))

    def test_step_structure(self):
        x = np.array([-1.0, 0.2, 0.9, 1.6])
        mu_axis = np.linspace(-2, 2, 401)
        sg_axis = np.array([1.0])
        lm = pinned_log_m(1.5, ControlSets(np.array([0.0]), np.array([0.5, 0.5])),
                          normal_family(), x, mu_axis, sg_axis)[:, 0]
        below = np.array([np.sum(x <= m) for m in mu_axis])
        jumps = np.abs(np.diff(lm)) > 1e-14
        np.testing.assert_array_equal(jumps, np.diff(below) != 0)

    def test_flattens_for_large_a(self, normal200):
        fam = normal_family()
        lat = default_lattice(normal200, size=31)
        cs = ControlSets(np.array([0.0]), np.array([0.5, 0.5]))
        a = pinned_posterior(1e12, cs, fam, normal200, lattice=lat)
        b = semiparam_posterior(fam, normal200, lattice=lat)
        assert np.abs(a.masses - b.masses).max() <= 1e-6

    def test_mass_localization(self):
        x = np.random.default_rng(5).normal(0.3, 1.2, 150)
        fam = normal_family()
        cs = ControlSets(np.array([0.0]), np.array([0.5, 0.5]))
        post = pinned_posterior(1e6, cs, fam, x)
        g = lambda y: pinned_residual_density(1e6, cs, fam, x, post, y)  # noqa: E731
        left = quadrature(g, -12.0, -1e-300)
        right = quadrature(g, 1e-300, 12.0)
        assert left == pytest.approx(0.5, abs=1e-3)
        assert right == pytest.approx(0.5, abs=1e-3)

    def test_residual_matching_masses(self):
        # symmetric data, symmetric lattice: residual masses are exactly (1/2, 1/2)
        x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
        fam = normal_family()
        cs = ControlSets(np.array([0.0]), np.array([0.5, 0.5]))
        lat = (np.linspace(-1, 1, 21), np.linspace(0.5, 3, 21))
        post = pinned_posterior(1.0, cs, fam, x, lattice=lat)
        fit = residual_bandwidths(x, post, "delta")
        y = np.array([-0.7, 0.4])
        est = pinned_residual_density(0.0, cs, fam, x, post, y, fit=fit)
        np.testing.assert_allclose(est, variable_kernel_density(y, fit.residuals, fit.bandwidths),
                                   rtol=1e-12)


class TestQuantile:
    def test_median_is_mu_hat(self, normal200):
        fam = normal_family()
        q = pinned_quantile_estimate(2.0, 0.5, normal200)
        post = pinned_posterior(2.0, ControlSets.quantile(0.5), fam, normal200)
        assert q == pytest.approx(post.mean()[0], abs=1e-14)

    def test_symmetry(self):
        base = np.random.default_rng(8).normal(size=40)
        x = np.concatenate([base, -base])
        lo = pinned_quantile_estimate(3.0, 0.2, x)
        hi = pinned_quantile_estimate(3.0, 0.8, x)
        assert lo + hi == pytest.approx(0.0, abs=1e-9)

    def test_large_a_is_plug_in(self, normal200):
        fam = normal_family()
        lat = default_lattice(normal200, size=61)
        mu, sg = semiparam_posterior(fam, normal200, lattice=lat).mean()
        q = pinned_quantile_estimate(1e12, 0.9, normal200, lattice=lat)
        assert q == pytest.approx(mu + sg * stats.norm.ppf(0.9), abs=1e-6)

    def test_bad_p(self, normal200):
        with pytest.raises(DomainError):
            pinned_quantile_estimate(1.0, 1.0, normal200)
