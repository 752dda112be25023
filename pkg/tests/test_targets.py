"""Tests for the target densities, Kepler solver, and RV model."""

import numpy as np
import pytest

from aquad.targets import (
    BANANA_EXPERIMENT_PARAMS,
    BoxSupport,
    EvalBudgetExceededError,
    RvDataset,
    RvParams,
    TargetDensity,
    banana_log_density,
    banana_target,
    make_rv_dataset,
    multimodal_log_density,
    multimodal_target,
    rv_log_likelihood,
    rv_predict,
    rv_prior_indicator,
    rv_residual_ss,
    rv_target,
    solve_kepler,
)

TWO_PI = 2.0 * np.pi


class TestBoxSupport:
    def test_measure_and_diameter(self):
        box = BoxSupport(np.array([0.0, 0.0]), np.array([2.0, 5.0]))
        assert box.measure() == 10.0
        assert box.diameter() == pytest.approx(np.sqrt(4 + 25))

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            BoxSupport(np.array([1.0]), np.array([0.5]))

    def test_contains(self):
        box = BoxSupport.cube(1.0, 3)
        assert box.contains(np.zeros(3))
        assert not box.contains(np.array([0.0, 0.0, 1.5]))

    def test_samplers_stay_inside(self):
        box = BoxSupport(np.array([-1.0, 3.0]), np.array([1.0, 4.0]))
        pts = box.sample_uniform(500, np.random.default_rng(0))
        assert np.all(box.contains(pts))
        pts = box.sample_sobol(500, seed=42)
        assert np.all(box.contains(pts))


class TestBananaDensity:
    def test_value_at_origin(self):
        # -(3.5)^2 / 32 with the textbook defaults
        assert banana_log_density(np.zeros(2)) == pytest.approx(-0.3828125, abs=1e-15)

    def test_first_term_vanishes_on_ridge(self):
        # x1 = eta1/B makes the quadratic term zero
        x = np.array([0.875, 0.0])
        assert banana_log_density(x) == pytest.approx(-0.875 ** 2 / (2 * 3.5 ** 2), abs=1e-15)

    def test_outside_box_is_minus_inf(self):
        assert banana_log_density(np.array([10.5, 0.0])) == -np.inf

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            banana_log_density(np.zeros(3), dim=2)
        with pytest.raises(ValueError):
            banana_log_density(np.zeros(2), dim=1)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(1)
        xs = rng.uniform(-10, 10, size=(50, 2))
        batch = banana_log_density(xs)
        single = np.array([banana_log_density(x) for x in xs])
        np.testing.assert_allclose(batch, single, rtol=0, atol=0)

    def test_deterministic_and_finite_inside(self):
        rng = np.random.default_rng(2)
        xs = rng.uniform(-10, 10, size=(200, 2))
        v1 = banana_log_density(xs, **BANANA_EXPERIMENT_PARAMS)
        v2 = banana_log_density(xs, **BANANA_EXPERIMENT_PARAMS)
        assert np.all(np.isfinite(v1))
        np.testing.assert_array_equal(v1, v2)


class TestMultimodalDensity:
    def test_peak_lower_bound(self):
        # mixture at a component mean is at least that component / 3
        mu1 = np.zeros(10)
        mu1[0] = 5.0
        floor = np.log(1.0 / 3.0) - 5.0 * np.log(TWO_PI * 16.0)
        assert multimodal_log_density(mu1) >= floor - 1e-12

    def test_permutation_symmetry_of_trailing_coordinates(self):
        # all three component means are constant over coordinates 2..10,
        # so the density is invariant to permuting those coordinates
        rng = np.random.default_rng(8)
        x = rng.uniform(-10, 10, size=10)
        y = x.copy()
        y[1], y[7] = x[7], x[1]
        assert multimodal_log_density(y) == pytest.approx(multimodal_log_density(x), rel=1e-14)

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            multimodal_log_density(np.zeros(9))

    def test_matches_scipy_mixture_oracle(self):
        from scipy.stats import multivariate_normal
        means = np.zeros((3, 10))
        means[0, 0], means[1, 0], means[2, :] = 5.0, -7.0, 1.0
        comps = [multivariate_normal(mean=m, cov=16.0 * np.eye(10)) for m in means]
        rng = np.random.default_rng(9)
        xs = rng.uniform(-15, 15, size=(100, 10))
        expected = np.log(np.mean([c.pdf(xs) for c in comps], axis=0))
        np.testing.assert_allclose(multimodal_log_density(xs), expected, rtol=1e-10)


class TestTargetDensity:
    def test_counter_increments_once_per_call(self):
        t = banana_target(2)
        assert t.eval_count == 0
        t.log_eval(np.zeros(2))
        t.log_eval(np.ones(2))
        assert t.eval_count == 2

    def test_counter_counts_outside_evaluations(self):
        t = banana_target(2)
        assert t.log_eval(np.array([50.0, 0.0])) == -np.inf
        assert t.eval_count == 1

    def test_budget_cap(self):
        t = banana_target(2, max_evals=3)
        for _ in range(3):
            t.log_eval(np.zeros(2))
        with pytest.raises(EvalBudgetExceededError):
            t.log_eval(np.zeros(2))

    def test_thread_safe_counting(self):
        import threading
        t = banana_target(2)
        def work():
            for _ in range(200):
                t.log_eval(np.zeros(2))
        threads = [threading.Thread(target=work) for _ in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert t.eval_count == 800


class TestKeplerSolver:
    def test_circular_orbit_identity(self):
        assert solve_kepler(1.3, 0.0) == pytest.approx(1.3, abs=1e-15)

    def test_half_period_exact(self):
        assert solve_kepler(np.pi, 0.5) == pytest.approx(np.pi, abs=1e-12)

    def test_against_bisection_oracle(self):
        # independent bisection on the monotone g(E) = E - e sin E - M
        e, M = 0.1, 1.0
        lo, hi = 0.0, TWO_PI
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if mid - e * np.sin(mid) - M >= 0:
                hi = mid
            else:
                lo = mid
        assert solve_kepler(M, e) == pytest.approx(0.5 * (lo + hi), abs=1e-10)

    def test_residual_bound_random_sweep(self):
        rng = np.random.default_rng(4)
        es = rng.uniform(0.0, 0.99, size=10_000)
        ms = rng.uniform(-20.0, 20.0, size=10_000)
        worst = 0.0
        for e, m in zip(es, ms):
            E = solve_kepler(m, float(e))
            worst = max(worst, abs(E - e * np.sin(E) - m))
        assert worst <= 1e-12

    def test_invalid_eccentricity(self):
        with pytest.raises(ValueError):
            solve_kepler(1.0, 1.0)
        with pytest.raises(ValueError):
            solve_kepler(1.0, -0.1)


class TestRvModel:
    def params(self):
        return RvParams(2.0, np.array([[25.0, 0.61, 0.1, 15.0, 3.0]]))

    def test_no_planets_is_constant(self):
        p = RvParams(3.7)
        ts = np.linspace(0, 100, 11)
        np.testing.assert_array_equal(rv_predict(p, ts), np.full(11, 3.7))

    def test_circular_orbit_reduces_to_cosine(self):
        p = RvParams(0.0, np.array([[10.0, 0.0, 0.0, 20.0, 5.0]]))
        ts = np.linspace(0, 40, 17)
        expected = 10.0 * np.cos(TWO_PI * (ts - 5.0) / 20.0)
        np.testing.assert_allclose(rv_predict(p, ts), expected, atol=1e-12)

    def test_periastron_value(self):
        p = self.params()
        # at t = tau the true anomaly is zero
        expected = 2.0 + 25.0 * (np.cos(0.61) + 0.1 * np.cos(0.61))
        assert rv_predict(p, 3.0) == pytest.approx(expected, abs=1e-10)

    def test_periodicity(self):
        p = self.params()
        ts = np.linspace(0, 15, 40)
        v1 = rv_predict(p, ts)
        v2 = rv_predict(p, ts + 15.0)
        np.testing.assert_allclose(v1, v2, atol=1e-9)

    def test_vector_param_round_trip(self):
        p = RvParams(2.0, np.array([[25.0, 0.61, 0.1, 15.0, 3.0],
                                    [5.0, 0.17, 0.3, 115.0, 25.0]]))
        q = RvParams.from_vector(p.to_vector())
        assert q.v0 == p.v0
        np.testing.assert_array_equal(q.planets, p.planets)
        assert p.dim == 11


class TestRvLikelihood:
    def dataset(self):
        return make_rv_dataset(1, seed=7)

    def test_zero_residuals(self):
        data = RvDataset(np.arange(5.0), np.full(5, 1.5))
        p = RvParams(1.5)
        assert rv_log_likelihood(p, 2.0, data) == pytest.approx(-2.5 * np.log(TWO_PI * 4.0))

    def test_sigma_doubling_identity(self):
        data = self.dataset()
        p = RvParams(2.0, np.array([[25.0, 0.61, 0.1, 15.0, 3.0]]))
        sse = rv_residual_ss(p, data)
        s = 1.7
        old = rv_log_likelihood(p, s, data)
        new = rv_log_likelihood(p, 2 * s, data)
        ident = old + (sse / 2.0) * (1 / s ** 2 - 1 / (4 * s ** 2)) - data.count * np.log(2.0)
        assert new == pytest.approx(ident, rel=1e-12)

    def test_profile_peaks_near_generating_noise(self):
        # data generated with sigma^2 = 2; the profiled likelihood at the
        # true parameters should peak near sigma = sqrt(2)
        data = self.dataset()
        p = RvParams(2.0, np.array([[25.0, 0.61, 0.1, 15.0, 3.0]]))
        grid = np.arange(1.0, 15.5, 0.25)
        lls = [rv_log_likelihood(p, s, data) for s in grid]
        assert abs(grid[int(np.argmax(lls))] - np.sqrt(2.0)) <= 0.5

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            rv_log_likelihood(RvParams(0.0), 0.0, self.dataset())


class TestRvPrior:
    def dataset(self):
        return make_rv_dataset(1, seed=7)

    def test_midpoint_parameters_accepted(self):
        data = self.dataset()
        span = data.velocity_span()
        p = RvParams(0.0, np.array([[span / 2, np.pi, 0.5, 180.0, 90.0]]))
        assert rv_prior_indicator(p, data)

    def test_tau_conditioned_on_period(self):
        data = self.dataset()
        p = RvParams(0.0, np.array([[1.0, 0.0, 0.0, 15.0, 15.1]]))
        assert not rv_prior_indicator(p, data)

    def test_unit_eccentricity_rejected(self):
        data = self.dataset()
        p = RvParams(0.0, np.array([[1.0, 0.0, 1.0, 15.0, 3.0]]))
        assert not rv_prior_indicator(p, data)


class TestRvTargetAndData:
    def test_aux_carries_residual_sum(self):
        data = make_rv_dataset(1, seed=5)
        t = rv_target(data, 1)
        x = RvParams(2.0, np.array([[25.0, 0.61, 0.1, 15.0, 3.0]])).to_vector()
        lp = t.log_eval(x)
        assert np.isfinite(lp)
        sse = t.last_aux
        p = RvParams.from_vector(x)
        assert sse == pytest.approx(rv_residual_ss(p, data), rel=1e-12)

    def test_prior_violation_gives_minus_inf(self):
        data = make_rv_dataset(1, seed=5)
        t = rv_target(data, 1)
        x = RvParams(25.0, np.array([[25.0, 0.61, 0.1, 15.0, 3.0]])).to_vector()
        assert t.log_eval(x) == -np.inf
        assert t.last_aux is None

    def test_csv_round_trip(self, tmp_path):
        data = make_rv_dataset(2, seed=11)
        path = tmp_path / "rv.csv"
        data.to_csv(path)
        back = RvDataset.from_csv(path)
        np.testing.assert_array_equal(back.times, data.times)
        np.testing.assert_array_equal(back.velocities, data.velocities)

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            RvDataset(np.array([1.0, 1.0]), np.array([0.0, 0.0]))

    def test_generator_is_seeded(self):
        a = make_rv_dataset(1, seed=3)
        b = make_rv_dataset(1, seed=3)
        np.testing.assert_array_equal(a.velocities, b.velocities)
