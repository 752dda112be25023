"""Tests for every estimator route and their cross-route identities."""

import numpy as np
import pytest

from aquad.interpolant import fit
from aquad.kernels import GaussianKernelSpec, NnKernelSpec, voronoi_build
from aquad.quadrature import (
    EstimateReport,
    GaussianProposal,
    MissingMeasuresError,
    MomentRequest,
    StaleVoronoiError,
    UniformBoxProposal,
    estimate,
    i_hat_closed_form,
    i_hat_gauss_hermite,
    i_hat_kernel_is,
    i_hat_kernel_mc,
    self_proposals,
    surrogate_is,
    voronoi_estimates,
    z_hat,
)
from aquad.targets import BoxSupport, banana_target

BOX1 = BoxSupport(np.array([0.0]), np.array([1.0]))


def nn_model_1d(nodes, values, box=None):
    box = box or BoxSupport(np.array([-10.0]), np.array([10.0]))
    return fit(np.asarray(nodes, float).reshape(-1, 1), np.log(values), NnKernelSpec(box))


def gaussian_model(seed=0, n=10, h=1.0, dim=2, jitter=0.0):
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(-3, 3, size=(n, dim))
    logs = -0.5 * np.sum(nodes ** 2, axis=1)
    return fit(nodes, logs, GaussianKernelSpec(h, dim), jitter=jitter)


class TestZhat:
    def test_single_nn_node_unit_box(self):
        box = BoxSupport(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        m = fit(np.array([[0.5, 0.5]]), np.log(np.array([3.0])), NnKernelSpec(box))
        v = voronoi_build(m.kernel, m.nodes, 100, rng=np.random.default_rng(0))
        assert z_hat(m, v) == pytest.approx(3.0, rel=1e-12)

    def test_nn_without_measures_raises(self):
        m = nn_model_1d([0.0, 1.0], [1.0, 2.0])
        with pytest.raises(MissingMeasuresError):
            z_hat(m)

    def test_gaussian_sum_of_beta(self):
        m = gaussian_model()
        assert z_hat(m) == pytest.approx(np.exp(m.shift) * float(np.sum(m.beta)), rel=1e-14)

    def test_gaussian_self_interpolation_near_one(self):
        # target IS a normalized Gaussian; nodes on a grid; matched h
        h = 1.0
        g = np.linspace(-2, 2, 5)
        nodes = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        logs = -0.5 * np.sum(nodes ** 2, axis=1) - np.log(2 * np.pi)
        m = fit(nodes, logs, GaussianKernelSpec(h, 2), jitter=0.0)
        assert z_hat(m) == pytest.approx(1.0, abs=0.1)


class TestClosedForm:
    def test_single_node_mean_is_node(self):
        m = fit(np.array([[-0.4, 0.0]]), np.array([0.0]), GaussianKernelSpec(1.0, 2), jitter=0.0)
        np.testing.assert_allclose(i_hat_closed_form(m, MomentRequest.power(1)),
                                   np.array([-0.4, 0.0]), atol=1e-14)

    def test_beta_and_nu_forms_agree(self):
        for seed in range(5):
            m = gaussian_model(seed=seed)
            i_hat_closed_form(m, MomentRequest.power(1))
            assert i_hat_closed_form.last_cross_check <= 1e-10
            i_hat_closed_form(m, MomentRequest.power(2))
            assert i_hat_closed_form.last_cross_check <= 1e-10

    def test_requires_gaussian(self):
        m = nn_model_1d([0.0, 1.0], [1.0, 2.0])
        with pytest.raises(TypeError):
            i_hat_closed_form(m, MomentRequest.power(1))


class TestGaussHermiteRoute:
    def test_matches_closed_form_for_polynomials(self):
        m = gaussian_model(seed=1)
        for r in (1, 2):
            gh = i_hat_gauss_hermite(m, MomentRequest.power(r), m_per_dim=2)
            cf = i_hat_closed_form(m, MomentRequest.power(r))
            np.testing.assert_allclose(gh, cf, rtol=1e-12)

    def test_constant_integrand_is_one(self):
        m = gaussian_model(seed=2)
        assert i_hat_gauss_hermite(m, MomentRequest.one(), 3) == pytest.approx(1.0, rel=1e-12)

    def test_odd_symmetry_cancels(self):
        nodes = np.array([[-1.0], [0.0], [1.0]])
        logs = np.log(np.array([0.5, 1.0, 0.5]))
        m = fit(nodes, logs, GaussianKernelSpec(1.0, 1), jitter=0.0)
        cube = MomentRequest.custom(lambda x: x[:, 0] ** 3, "x^3")
        assert i_hat_gauss_hermite(m, cube, 5) == pytest.approx(0.0, abs=1e-12)


class TestKernelMc:
    def test_constant_is_exact(self):
        m = gaussian_model(seed=3)
        rng = np.random.default_rng(0)
        val = i_hat_kernel_mc(m, MomentRequest.one(), 50, rng)
        assert float(val) == pytest.approx(1.0, rel=1e-12)

    def test_single_node_single_draw(self):
        m = fit(np.array([[0.0]]), np.array([0.0]), GaussianKernelSpec(1.0, 1), jitter=0.0)
        rng = np.random.default_rng(1)
        val = i_hat_kernel_mc(m, MomentRequest.power(1), 1, rng)
        # with one sample the estimate is exactly f(z_11)
        rng2 = np.random.default_rng(1)
        z = m.nodes[0] + 1.0 * rng2.standard_normal((1, 1))
        assert float(val) == pytest.approx(float(z[0, 0]), rel=1e-12)

    def test_converges_to_closed_form(self):
        m = gaussian_model(seed=4)
        cf = i_hat_closed_form(m, MomentRequest.power(1))
        errs = []
        for M in (1000, 10_000, 100_000):
            mc = i_hat_kernel_mc(m, MomentRequest.power(1), M, np.random.default_rng(2))
            errs.append(np.max(np.abs(mc - cf)))
        assert errs[2] < errs[0]
        assert errs[2] <= 3.0 / np.sqrt(100_000) * 10  # loose 3-sigma style band


class TestKernelIs:
    def test_self_proposal_gives_unit_weights(self):
        m = gaussian_model(seed=5, n=4)
        val, z_is = i_hat_kernel_is(m, MomentRequest.one(), self_proposals(m), 100,
                                    np.random.default_rng(3))
        assert float(val) == pytest.approx(1.0, rel=1e-12)
        assert z_is == pytest.approx(z_hat(m), rel=1e-12)

    def test_uniform_proposal_measures_near_one(self):
        m = fit(np.array([[0.0]]), np.array([0.0]), GaussianKernelSpec(1.0, 1), jitter=0.0)
        box = BoxSupport(np.array([-10.0]), np.array([10.0]))
        q = UniformBoxProposal(box)
        M = 100_000
        _, z_is = i_hat_kernel_is(m, MomentRequest.one(), [q], M, np.random.default_rng(4))
        c_hat = z_is / (np.exp(m.shift) * m.beta[0])
        assert 0.99 <= c_hat <= 1.01


class TestVoronoiEstimates:
    def test_constant_moment_is_one(self):
        m = nn_model_1d([0.2, 0.8], [2.0, 1.0], BOX1)
        v = voronoi_build(m.kernel, m.nodes, 1000, rng=np.random.default_rng(5))
        rep = voronoi_estimates(m, [MomentRequest.one()], v)
        assert float(rep.i_hat["one"]) == pytest.approx(1.0, rel=1e-12)

    def test_single_node(self):
        box = BoxSupport(np.array([0.0]), np.array([2.0]))
        m = nn_model_1d([1.0], [3.0], box)
        v = voronoi_build(m.kernel, m.nodes, 500, rng=np.random.default_rng(6))
        rep = voronoi_estimates(m, [MomentRequest.power(1)], v)
        assert rep.z_hat == pytest.approx(6.0, rel=1e-12)     # pi * |X|
        assert float(rep.i_hat["x^1"]) == pytest.approx(np.mean(v.probes), rel=1e-12)

    def test_one_point_fallback_matches_riemann_sum(self):
        m = nn_model_1d([0.25, 0.75], [2.0, 4.0], BOX1)
        v = voronoi_build(m.kernel, m.nodes, 4096, rng=np.random.default_rng(7))
        rep = voronoi_estimates(m, [MomentRequest.power(1)], v, one_point=True)
        s_n = np.sum(np.array([2.0, 4.0]) * v.measures * np.array([0.25, 0.75]))
        assert float(rep.i_hat["x^1"]) * rep.z_hat == pytest.approx(s_n, rel=1e-10)

    def test_stale_approx_rejected(self):
        m = nn_model_1d([0.25, 0.75], [2.0, 4.0], BOX1)
        v = voronoi_build(m.kernel, np.array([[0.3], [0.6]]), 100, rng=np.random.default_rng(8))
        with pytest.raises(StaleVoronoiError):
            voronoi_estimates(m, [MomentRequest.one()], v)


class TestSurrogateIs:
    def test_byte_identical_to_voronoi_with_shared_probes(self):
        rng = np.random.default_rng(9)
        target = banana_target(2)
        nodes = target.support.sample_uniform(25, rng)
        logs = np.array([target.log_eval(x) for x in nodes])
        m = fit(nodes, logs, NnKernelSpec(target.support))
        v = voronoi_build(m.kernel, m.nodes, 20_000, rng=np.random.default_rng(10))
        reqs = [MomentRequest.power(1), MomentRequest.power(2)]
        rep_v = voronoi_estimates(m, reqs, v)
        rep_s = surrogate_is(m, reqs, proposal="uniform", probes=v.probes)
        assert rep_s.z_hat == rep_v.z_hat            # bit-identical
        for k in ("x^1", "x^2"):
            np.testing.assert_array_equal(rep_s.i_hat[k], rep_v.i_hat[k])

    def test_self_normalized_sanity(self):
        # surrogate equal to the proposal: weights constant, I = MC mean of f
        box = BoxSupport(np.array([0.0]), np.array([1.0]))
        m = nn_model_1d([0.5], [2.0], box)
        rep = surrogate_is(m, [MomentRequest.power(1)], proposal="uniform",
                           M=5000, rng=np.random.default_rng(11))
        assert rep.z_hat == pytest.approx(2.0, rel=1e-12)

    def test_mixture_proposal_consistent(self):
        rng = np.random.default_rng(12)
        target = banana_target(2)
        nodes = target.support.sample_uniform(40, rng)
        logs = np.array([target.log_eval(x) for x in nodes])
        m = fit(nodes, logs, NnKernelSpec(target.support))
        v = voronoi_build(m.kernel, m.nodes, 200_000, rng=np.random.default_rng(13))
        ref = voronoi_estimates(m, [MomentRequest.power(1)], v)
        rep = surrogate_is(m, [MomentRequest.power(1)], proposal="gaussian-mixture",
                           M=200_000, rng=np.random.default_rng(14))
        assert rep.z_hat == pytest.approx(ref.z_hat, rel=0.15)
        assert rep.z_hat > 0

    def test_mixture_needs_two_nodes(self):
        m = nn_model_1d([0.5], [2.0], BOX1)
        with pytest.raises(ValueError):
            surrogate_is(m, [], proposal="gaussian-mixture", M=10,
                         rng=np.random.default_rng(15))

    def test_nonnegative_weights_for_nn(self):
        m = nn_model_1d([0.2, 0.7], [1.0, 3.0], BOX1)
        rep = surrogate_is(m, [MomentRequest.one()], proposal="uniform", M=1000,
                           rng=np.random.default_rng(16))
        assert rep.z_hat >= 0


class TestInvariants:
    def test_shift_invariance(self):
        # multiplying the target by c scales Z and leaves I unchanged
        rng = np.random.default_rng(17)
        target = banana_target(2)
        nodes = target.support.sample_uniform(30, rng)
        logs = np.array([target.log_eval(x) for x in nodes])
        c = 1e40
        m1 = fit(nodes, logs, NnKernelSpec(target.support))
        m2 = fit(nodes, logs + np.log(c), NnKernelSpec(target.support))
        v1 = voronoi_build(m1.kernel, nodes, 10_000, rng=np.random.default_rng(18))
        v2 = voronoi_build(m2.kernel, nodes, 10_000, rng=np.random.default_rng(18))
        r1 = voronoi_estimates(m1, [MomentRequest.power(1)], v1)
        r2 = voronoi_estimates(m2, [MomentRequest.power(1)], v2)
        assert r2.z_hat == pytest.approx(c * r1.z_hat, rel=1e-12)
        np.testing.assert_allclose(r2.i_hat["x^1"], r1.i_hat["x^1"], rtol=1e-12)

    def test_eval_count_conservation(self):
        target = banana_target(2)
        rng = np.random.default_rng(19)
        nodes = target.support.sample_uniform(15, rng)
        logs = np.array([target.log_eval(x) for x in nodes])
        before = target.eval_count
        m = fit(nodes, logs, NnKernelSpec(target.support))
        estimate(m, [MomentRequest.power(1)], M=5000, rng=rng)
        mg = fit(nodes, logs, GaussianKernelSpec(1.0, 2))
        estimate(mg, [MomentRequest.power(1), MomentRequest.power(2)])
        assert target.eval_count == before

    def test_error_bound_inequality_1d(self):
        # |J - J~| <= |X| max|f| max|pi - pi_hat| on a dense grid
        box = BoxSupport(np.array([-3.0]), np.array([3.0]))
        log_fn = lambda x: -0.5 * np.sum(x ** 2, axis=-1)
        rng = np.random.default_rng(20)
        nodes = box.sample_uniform(12, rng)
        m = fit(nodes, log_fn(nodes), NnKernelSpec(box))
        grid = np.linspace(-3, 3, 4001)[:, None]
        pi = np.exp(log_fn(grid))
        from aquad.interpolant import predict
        pihat = predict(m, grid)
        f = grid[:, 0]
        J = np.trapezoid(f * pi, dx=6 / 4000)
        Jt = np.trapezoid(f * pihat, dx=6 / 4000)
        bound = box.measure() * np.max(np.abs(f)) * np.max(np.abs(pi - pihat))
        assert abs(J - Jt) <= bound + 1e-12


class TestRouting:
    def test_auto_routes(self):
        mg = gaussian_model(seed=21)
        rep = estimate(mg, [MomentRequest.power(1)])
        assert rep.route == "closed-form"
        rep = estimate(mg, [MomentRequest.custom(lambda x: np.sin(x[:, 0]), "sin")])
        assert rep.route == "gauss-hermite"
        mn = nn_model_1d([0.1, 0.9], [1.0, 2.0], BOX1)
        rep = estimate(mn, [MomentRequest.power(1)], M=500, rng=np.random.default_rng(22))
        assert rep.route == "voronoi"

    def test_high_dim_custom_falls_back_to_mc(self):
        rng = np.random.default_rng(23)
        nodes = rng.normal(size=(5, 7))
        logs = -0.5 * np.sum(nodes ** 2, axis=1)
        m = fit(nodes, logs, GaussianKernelSpec(1.0, 7))
        rep = estimate(m, [MomentRequest.custom(lambda x: np.cos(x[:, 0]), "c")],
                       M=200, rng=np.random.default_rng(24))
        assert rep.route == "kernel-mc"

    def test_report_round_trip(self):
        rep = EstimateReport(route="voronoi", z_hat=1.5, log_z_hat=np.log(1.5),
                             i_hat={"x^1": np.array([0.1, 0.2])}, m_used=100)
        back = EstimateReport.from_json(rep.to_json())
        assert back.z_hat == rep.z_hat
        np.testing.assert_array_equal(back.i_hat["x^1"], [0.1, 0.2])
