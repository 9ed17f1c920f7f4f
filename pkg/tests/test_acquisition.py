import numpy as np
import pytest
from scipy.stats import norm

from ckgbo.acquisition import (
    Incumbent,
    as_batch,
    ckg_estimate,
    constrained_ei,
    expected_improvement,
    feasibility_probability,
    kg_discrete,
    lower_confidence_bound,
    probability_of_improvement,
    upper_confidence_bound,
)
from ckgbo.errors import (
    AcquisitionEstimationError,
    InfeasibleModelError,
    InvalidArgumentError,
)
from ckgbo.gp import GpPosterior, Prior
from ckgbo.kernels import KernelSpec
from ckgbo.rng import draw_normals, philox


def one_point(y=0.0, noise=0.0, mean=0.0, a=1.0):
    """GP on [0, 1] with a single observation at 0.5."""
    prior = Prior(mean, KernelSpec("gaussian", 1.0, (a,)), noise)
    return GpPosterior.fit(prior, [[0.5]], [y])


def five_point(seed=0, shift=0.0, noise=1e-4):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (5, 1))
    y = np.sin(6 * X[:, 0]) + shift
    return GpPosterior.fit(Prior(shift, KernelSpec("gaussian", 1.0, (8.0,)), noise), X, y)


GRID25 = np.linspace(0, 1, 25)[:, None]


class TestIncumbent:
    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Incumbent(np.zeros(1), np.inf)

    def test_unknown_source(self):
        with pytest.raises(InvalidArgumentError):
            Incumbent(np.zeros(1), 0.0, source="magic")


class TestClosedForms:
    def setup_method(self):
        self.post = one_point(y=0.2)
        self.x = np.array([0.9])
        self.mu = self.post.mean(self.x[None])[0]
        self.sd = np.sqrt(self.post.var(self.x[None])[0])

    def test_pi_at_incumbent_is_half(self):
        inc = Incumbent(self.x, self.mu)
        assert probability_of_improvement(self.post, self.x, inc) == pytest.approx(0.5)

    def test_pi_one_sd_better(self):
        inc = Incumbent(self.x, self.mu + self.sd)
        assert probability_of_improvement(self.post, self.x, inc) == pytest.approx(norm.cdf(1.0))

    def test_pi_large_epsilon(self):
        inc = Incumbent(self.x, self.mu)
        assert probability_of_improvement(self.post, self.x, inc, epsilon=7 * self.sd) < 1e-8

    def test_pi_zero_variance(self):
        x = np.array([0.5])
        assert probability_of_improvement(self.post, x, Incumbent(x, 0.3)) == 1.0
        assert probability_of_improvement(self.post, x, Incumbent(x, 0.1)) == 0.0

    def test_ucb(self):
        assert upper_confidence_bound(self.post, self.x, 0.0) == pytest.approx(self.mu)
        assert upper_confidence_bound(self.post, self.x, 1.5) == pytest.approx(
            self.mu + 1.5 * self.sd)
        assert lower_confidence_bound(self.post, self.x, 1.5) == pytest.approx(
            self.mu - 1.5 * self.sd)
        assert upper_confidence_bound(self.post, [0.5], 3.0) == pytest.approx(0.2)
        with pytest.raises(InvalidArgumentError):
            upper_confidence_bound(self.post, self.x, -1.0)

    def test_ei_at_incumbent(self):
        inc = Incumbent(self.x, self.mu)
        ei = expected_improvement(self.post, self.x, inc)
        assert ei == pytest.approx(self.sd * norm.pdf(0.0), rel=1e-12)

    def test_ei_zero_variance(self):
        x = np.array([0.5])
        assert expected_improvement(self.post, x, Incumbent(x, 0.5)) == pytest.approx(0.3)
        assert expected_improvement(self.post, x, Incumbent(x, 0.0)) == 0.0

    def test_ei_dominates_deterministic_gain(self):
        X = np.linspace(0, 1, 41)[:, None]
        inc = Incumbent(self.x, 0.1)
        ei = expected_improvement(self.post, X, inc)
        assert np.all(ei >= np.maximum(0, 0.1 - self.post.mean(X)) - 1e-12)

    def test_feasibility_closed_form(self):
        assert feasibility_probability(one_point(0.0, noise=0.01), [0.5]) == pytest.approx(0.5)
        post = one_point(y=0.0, mean=-1.0)
        x = np.array([0.9])
        mu = post.mean(x[None])[0]
        sd = np.sqrt(post.var(x[None])[0])
        assert feasibility_probability(post, x) == pytest.approx(norm.cdf(-mu / sd))
        assert feasibility_probability(post, [0.5]) == 1.0

    def test_feasibility_predictive_includes_noise(self):
        post = one_point(y=0.3, noise=0.04)
        x = np.array([0.5])
        mu, var = post.mean_var(x[None])
        assert feasibility_probability(post, x) == pytest.approx(
            norm.cdf(-mu[0] / np.sqrt(var[0] + 0.04)))
        assert feasibility_probability(post, x, predictive=False) == pytest.approx(
            norm.cdf(-mu[0] / np.sqrt(var[0])))

    def test_constrained_ei(self):
        obj = one_point(0.2)
        con = one_point(0.1, mean=0.2)
        X = np.linspace(0, 1, 9)[:, None]
        inc = Incumbent(np.array([0.0]), 0.1)
        np.testing.assert_array_equal(constrained_ei([obj], X, inc),
                                      expected_improvement(obj, X, inc))
        expected = expected_improvement(obj, X, inc) * feasibility_probability(
            con, X, predictive=False)
        np.testing.assert_allclose(constrained_ei([obj, con], X, inc), expected, rtol=1e-14)
        np.testing.assert_allclose(constrained_ei([obj, con], X, None),
                                   feasibility_probability(con, X, predictive=False))

    def test_constrained_ei_certain_violation(self):
        obj = one_point(0.2)
        con = one_point(1.0, mean=1.0)  # observed infeasible, noise free
        assert constrained_ei([obj, con], [0.5], Incumbent(np.zeros(1), 1.0)) == 0.0

    def test_constrained_ei_joint_mc(self):
        obj = one_point(0.2)
        con = one_point(0.1, mean=0.0)
        x = np.array([0.8])
        inc = Incumbent(np.zeros(1), 0.3)
        n = 10**6
        g = philox(4)
        (m0,), (v0,) = obj.mean_var(x[None])
        (m1,), (v1,) = con.mean_var(x[None])
        f = m0 + np.sqrt(v0) * g.standard_normal(n)
        c = m1 + np.sqrt(v1) * g.standard_normal(n)
        s = np.maximum(0, inc.value - f) * (c <= 0)
        assert abs(s.mean() - constrained_ei([obj, con], x, inc)) <= 3 * s.std() / np.sqrt(n)

    def test_ei_mc_oracle(self):
        # mu = 0.5, sd = 0.7, f(x*) = 0.2 via a prior-only posterior
        post = GpPosterior.fit(Prior(0.5, KernelSpec("gaussian", 0.49, (1.0,)), 0.0),
                               [[100.0]], [0.5])
        x = np.array([0.0])
        assert post.var(x[None])[0] == pytest.approx(0.49)
        Y = 0.5 + 0.7 * philox(5).standard_normal(10**6)
        s = np.maximum(0.0, 0.2 - Y)
        ei = expected_improvement(post, x, Incumbent(x, 0.2))
        assert abs(s.mean() - ei) <= 3 * s.std() / np.sqrt(s.size)


class TestAsBatch:
    def test_shapes(self):
        assert as_batch([0.3], 1).shape == (1, 1)
        assert as_batch([0.3, 0.4], 1).shape == (2, 1)
        assert as_batch([0.3, 0.4], 2).shape == (1, 2)

    def test_rejects(self):
        with pytest.raises(InvalidArgumentError):
            as_batch([[np.nan]], 1)
        with pytest.raises(InvalidArgumentError):
            as_batch(np.zeros((0, 1)), 1)
        with pytest.raises(InvalidArgumentError):
            as_batch([[0.1, 0.2]], 1)


class TestKgDiscrete:
    def test_observed_noise_free_point(self):
        post = one_point(0.0)
        est = kg_discrete(post, [0.5], GRID25, 1000, 0)
        assert est.value == 0.0
        assert est.std_error == 0.0

    def test_single_candidate_has_zero_mean(self):
        # per draw L = -sigma_tilde(a) Z, so only the expectation vanishes
        est = kg_discrete(five_point(), [0.3], [[0.7]], 500, 1)
        assert abs(est.value) <= 3 * est.std_error

    def test_brute_force_oracle(self):
        post = five_point(2)
        z = np.array([[0.41]])
        R = 10**5
        est = kg_discrete(post, z, GRID25, R, 7)
        Z = draw_normals(7, R, 0, 1)[0][:, 0, 0]
        mu_n = post.mean(GRID25)
        # direct conditioning: mu_{n+1} = mu_n + k(x,z)/(k(z,z)+noise) * (y - mu_n(z))
        kxz = post.cov(GRID25, z)[:, 0]
        s2 = post.var(z)[0] + post.noise_var
        ynew = post.mean(z)[0] + np.sqrt(s2) * Z
        upd = mu_n[None, :] + np.outer(ynew - post.mean(z)[0], kxz / s2)
        brute = mu_n.min() - upd.min(axis=1)
        assert abs(est.value - brute.mean()) <= 3 * brute.std(ddof=1) / np.sqrt(R)
        assert est.value >= -3 * est.std_error

    def test_rejects_bad_arguments(self):
        post = five_point()
        with pytest.raises(InvalidArgumentError):
            kg_discrete(post, [0.3], GRID25, 1, 0)
        with pytest.raises(InvalidArgumentError):
            kg_discrete(post, [[0.3], [0.4]], GRID25, 10, 0)


class TestCkgEstimate:
    def test_reduces_to_exp_kg(self):
        post = five_point(3)
        z = np.array([[0.37]])
        c, _ = ckg_estimate([post], z, GRID25, 20_000, 11)
        k = kg_discrete(post, z, GRID25, 20_000, 11)
        se = c.std_error / c.value
        assert abs(np.log(c.value) - k.value) <= 3 * max(se, k.std_error) + 1e-12

    def test_zero_innovation(self):
        obj = one_point(0.0)
        con = one_point(-0.3, mean=0.0, noise=0.0)
        est, samples = ckg_estimate([obj, con], [[0.5]], GRID25, 64, 0)
        assert all(s.L_value == 0.0 for s in samples)
        assert est.value == pytest.approx(feasibility_probability(con, [0.5]))

    def test_half_feasibility_factor(self):
        obj = five_point(4)
        con = GpPosterior.fit(Prior(0.0, KernelSpec("gaussian", 1.0, (1.0,)), 0.01),
                              [[100.0]], [5.0])
        z = np.array([[0.5]])
        assert con.mean(z)[0] == 0.0
        est, samples = ckg_estimate([obj, con], z, GRID25, 256, 1)
        L = np.array([s.L_value for s in samples])
        assert est.value == pytest.approx(0.5 * np.exp(L.mean()), rel=1e-12)

    def test_positive_and_deterministic(self):
        obj = five_point(5)
        con = one_point(-0.2, mean=0.0, noise=0.01)
        z = [[0.2], [0.8]]
        a, _ = ckg_estimate([obj, con], z, GRID25, 500, 3)
        b, _ = ckg_estimate([obj, con], z, GRID25, 500, 3)
        assert a.value > 0
        assert a == b

    def test_samples_are_finite_and_in_domain(self):
        obj = five_point(6)
        con = one_point(-0.2, mean=0.0, noise=0.01)
        _, samples = ckg_estimate([obj, con], [[0.3]], GRID25, 200, 2)
        assert len(samples) == 200
        for s in samples:
            assert np.isfinite(s.L_value)
            assert 0.0 <= s.inner_argmin[0] <= 1.0

    def test_infeasible_model_rejected(self):
        obj = five_point(7)
        con = one_point(1.0, mean=1.0, noise=0.01)
        with pytest.raises(InfeasibleModelError):
            ckg_estimate([obj, con], [[0.3]], GRID25, 64, 0)

    def test_feasibility_underflow_flagged(self):
        obj = five_point(8)
        con = GpPosterior.fit(Prior(0.0, KernelSpec("gaussian", 1.0, (50.0,)), 1e-6),
                              [[0.0], [1.0]], [-1.0, 60.0])
        est, _ = ckg_estimate([obj, con], [[1.0]], GRID25, 64, 0)
        assert est.value == 0.0
        assert "feasibility-underflow" in est.flags

    def test_inner_failure_rate_rejected(self):
        class Failing:
            def bind(self, posteriors):
                return self

            def current_min(self):
                from ckgbo.solvers import FeasibleMinResult
                return FeasibleMinResult(np.zeros(1), 0.0, True, 0.0, 1)

            def current_value(self):
                return 0.0

            def fantasy_min(self, ops, Z):
                from ckgbo.solvers.inner import InnerDraws
                R = Z.shape[0]
                return InnerDraws(np.zeros((R, 1)), np.zeros(R), np.zeros(R, bool),
                                  np.arange(R) % 2 == 0)

        with pytest.raises(AcquisitionEstimationError):
            ckg_estimate([five_point()], [[0.3]], Failing(), 64, 0)
