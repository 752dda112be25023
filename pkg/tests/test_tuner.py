"""Tests for the bandwidth-selection procedures."""

import numpy as np
import pytest

from aquad.interpolant import fit
from aquad.kernels import GaussianKernelSpec
from aquad.oracle import grid_truth
from aquad.targets import BoxSupport, banana_log_density, BANANA_EXPERIMENT_PARAMS, banana_target
from aquad.tuner import make_bandwidth_grid, tune_bandwidth_mll, tune_bandwidth_zhat


def banana_nodes(n=70, seed=0):
    target = banana_target(2)
    rng = np.random.default_rng(seed)
    # mimic an adaptive run's node spread: half near the ridge, half uniform
    uni = target.support.sample_uniform(n // 2, rng)
    ridge_x2 = rng.uniform(-6, 6, size=n - n // 2)
    ridge_x1 = (4.0 - ridge_x2 ** 2) / 10.0 + rng.normal(0, 0.4, size=n - n // 2)
    ridge = np.stack([np.clip(ridge_x1, -10, 10), ridge_x2], axis=-1)
    nodes = np.vstack([uni, ridge])
    logs = banana_log_density(nodes, **BANANA_EXPERIMENT_PARAMS)
    return nodes, logs, target.support


class TestGrid:
    def test_spans_separation_to_diameter(self):
        nodes, _, support = banana_nodes()
        grid = make_bandwidth_grid(nodes, support)
        from aquad.interpolant import separation_distance
        assert grid[0] == pytest.approx(separation_distance(nodes) / 10.0)
        assert grid[-1] == pytest.approx(support.diameter())
        assert len(grid) == 40
        assert np.all(np.diff(grid) > 0)

    def test_minimum_size_enforced(self):
        nodes, _, support = banana_nodes()
        with pytest.raises(ValueError):
            make_bandwidth_grid(nodes, support, n=8)


class TestZhatHeuristic:
    def test_scan_shape_rise_peak_decay(self):
        # Z_hat grows from near zero, peaks, then decays for too-large h
        nodes, logs, support = banana_nodes()
        grid = make_bandwidth_grid(nodes, support)
        scan = tune_bandwidth_zhat(nodes, logs, grid)
        zs = scan.values
        i_sel = int(np.flatnonzero(scan.grid == scan.selected)[0])
        assert zs[0] < zs[i_sel]
        finite_after = zs[i_sel:][np.isfinite(zs[i_sel:])]
        assert finite_after.min() < zs[i_sel]

    def test_selected_has_positive_z(self):
        for seed in range(3):
            nodes, logs, support = banana_nodes(seed=seed)
            grid = make_bandwidth_grid(nodes, support)
            scan = tune_bandwidth_zhat(nodes, logs, grid)
            m = fit(nodes, logs, GaussianKernelSpec(scan.selected, 2))
            assert float(np.sum(m.beta)) > 0

    def test_single_node_monotone_no_local_max(self):
        # Z(h) = pi(x) (2 pi)^{d/2} h^d grows monotonically: warning path
        nodes = np.array([[0.0, 0.0]])
        support = BoxSupport.cube(10.0, 2)
        grid = np.geomspace(0.01, support.diameter(), 24)
        scan = tune_bandwidth_zhat(nodes, np.array([0.0]), grid)
        assert scan.warning is not None
        assert scan.selected == pytest.approx(grid[-1])

    def test_recovers_true_z_on_gaussian_target(self):
        # 25-node grid sample of a standard 2-D normal: Z_hat(h*) near 1
        g = np.linspace(-3, 3, 5)
        nodes = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        logs = -0.5 * np.sum(nodes ** 2, axis=1) - np.log(2 * np.pi)
        support = BoxSupport.cube(10.0, 2)
        truth = grid_truth(lambda x: -0.5 * np.sum(x ** 2, axis=-1) - np.log(2 * np.pi),
                           support, 400)
        grid = make_bandwidth_grid(nodes, support)
        scan = tune_bandwidth_zhat(nodes, logs, grid)
        m = fit(nodes, logs, GaussianKernelSpec(scan.selected, 2))
        z = float(np.exp(m.shift) * np.sum(m.beta))
        assert abs(z - truth.z) / truth.z <= 0.25

    def test_deterministic(self):
        nodes, logs, support = banana_nodes(seed=1)
        grid = make_bandwidth_grid(nodes, support)
        a = tune_bandwidth_zhat(nodes, logs, grid)
        b = tune_bandwidth_zhat(nodes, logs, grid)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.selected == b.selected


class TestMllComparison:
    def test_mll_selects_wider_bandwidth_than_zhat(self):
        # the known failure mode: ML picks an h too big for density emulation
        nodes, logs, support = banana_nodes(seed=2)
        grid = make_bandwidth_grid(nodes, support)
        h_z = tune_bandwidth_zhat(nodes, logs, grid).selected
        h_m = tune_bandwidth_mll(nodes, logs, grid).selected
        assert h_m >= h_z

    def test_single_node_closed_form(self):
        # 1x1 K: log ML = -d^2/(2k) - log(k)/2 with k = peak + jitter
        nodes = np.array([[0.0]])
        logs = np.array([0.0])
        grid = np.geomspace(0.1, 5.0, 16)
        scan = tune_bandwidth_mll(nodes, logs, grid, jitter=0.0)
        peaks = (2 * np.pi) ** -0.5 / grid
        expected = -0.5 / peaks - 0.5 * np.log(peaks)
        np.testing.assert_allclose(scan.values, expected, rtol=1e-9)
        assert scan.selected == pytest.approx(grid[np.argmax(expected)])

    def test_large_jitter_flattens_mll(self):
        nodes, logs, support = banana_nodes(seed=3)
        grid = make_bandwidth_grid(nodes, support, n=16)
        scan = tune_bandwidth_mll(nodes, logs, grid, jitter=1e6)
        finite = scan.values[np.isfinite(scan.values)]
        assert np.ptp(finite) <= 1e-3 * abs(np.mean(finite))

    def test_scan_csv(self, tmp_path):
        nodes, logs, support = banana_nodes(seed=4)
        grid = make_bandwidth_grid(nodes, support, n=16)
        scan = tune_bandwidth_zhat(nodes, logs, grid)
        path = tmp_path / "scan.csv"
        scan.to_csv(path)
        import csv
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["h", "z_hat", "n_negative_beta"]
        assert len(rows) == 17
