"""Independent brute-force ground truth and error metrics.

Dense-grid midpoint quadrature for Z, means, and variance diagonals of
low-dimensional targets, with a two-resolution discretization-error
estimate, plus a QMC fallback for dimensions where a full grid is
infeasible.  This module deliberately shares no code with the kernel or
interpolant machinery it is used to judge.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .targets import BoxSupport

GRID_MAX_DIM = 4


@dataclass
class GridTruth:
    """Reference moments with their estimated discretization error."""

    resolution: int
    z: float
    mean: np.ndarray
    var: np.ndarray
    err_z: float
    err_mean: float
    err_var: float
    method: str = "grid-midpoint"

    def to_json(self) -> str:
        return json.dumps({
            "resolution": self.resolution, "z": self.z,
            "mean": np.asarray(self.mean).tolist(), "var": np.asarray(self.var).tolist(),
            "err_z": self.err_z, "err_mean": self.err_mean, "err_var": self.err_var,
            "method": self.method,
        })

    @classmethod
    def from_json(cls, text: str) -> "GridTruth":
        d = json.loads(text)
        d["mean"] = np.asarray(d["mean"])
        d["var"] = np.asarray(d["var"])
        return cls(**d)


def _grid_moments(log_fn, support: BoxSupport, n: int):
    """Midpoint-rule Z, mean, E[x^2]; vectorized two axes at a time."""
    d = support.dim
    centers = []
    for k in range(d):
        edges = np.linspace(support.lower[k], support.upper[k], n + 1)
        centers.append(0.5 * (edges[:-1] + edges[1:]))
    cell = float(np.prod(support.widths / n))

    s0 = 0.0
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    if d == 1:
        x = centers[0][:, None]
        p = np.exp(np.asarray(log_fn(x)))
        s0 = float(np.sum(p))
        s1[0] = float(np.sum(p * centers[0]))
        s2[0] = float(np.sum(p * centers[0] ** 2))
    else:
        mesh_a, mesh_b = np.meshgrid(centers[-2], centers[-1], indexing="ij")
        flat_ab = np.stack([mesh_a.ravel(), mesh_b.ravel()], axis=-1)
        outer_axes = [centers[k] for k in range(d - 2)]
        for combo in itertools.product(*outer_axes) if outer_axes else [()]:
            block = np.empty((flat_ab.shape[0], d))
            block[:, :d - 2] = combo
            block[:, d - 2:] = flat_ab
            p = np.exp(np.asarray(log_fn(block)))
            s0 += float(np.sum(p))
            s1 += p @ block
            s2 += p @ block ** 2
    z = s0 * cell
    mean = s1 / s0
    var = s2 / s0 - mean ** 2
    return z, mean, var


def grid_truth(log_fn, support: BoxSupport, resolution_per_dim: int) -> GridTruth:
    """Ground-truth moments by midpoint rule at resolutions n and 2n.

    ``log_fn`` must accept a batch (m, d).  The finer grid provides the
    reported values; the difference against the coarse grid estimates
    the discretization error.  Refuses d > 4 (use qmc_truth instead).
    """
    if support.dim > GRID_MAX_DIM:
        raise ValueError(f"full grids are limited to d <= {GRID_MAX_DIM}; "
                         "use qmc_truth for higher dimensions")
    if resolution_per_dim < 2:
        raise ValueError("resolution must be at least 2")
    zc, mc, vc = _grid_moments(log_fn, support, resolution_per_dim)
    zf, mf, vf = _grid_moments(log_fn, support, 2 * resolution_per_dim)
    return GridTruth(resolution=resolution_per_dim, z=zf, mean=mf, var=vf,
                     err_z=abs(zf - zc), err_mean=float(np.max(np.abs(mf - mc))),
                     err_var=float(np.max(np.abs(vf - vc))))


def qmc_truth(log_fn, support: BoxSupport, m: int, seed: int = 0) -> GridTruth:
    """Sobol-QMC reference moments for targets too high-dimensional to grid."""
    pts = support.sample_sobol(m, seed)
    half = m // 2
    box = support.measure()

    def moments(block):
        p = np.exp(np.asarray(log_fn(block)))
        s0 = float(np.mean(p))
        mean = (p @ block) / (s0 * block.shape[0])
        ex2 = (p @ block ** 2) / (s0 * block.shape[0])
        return box * s0, mean, ex2 - mean ** 2

    z1, m1, v1 = moments(pts[:half])
    z, mean, var = moments(pts)
    return GridTruth(resolution=m, z=z, mean=mean, var=var,
                     err_z=abs(z - z1), err_mean=float(np.max(np.abs(mean - m1))),
                     err_var=float(np.max(np.abs(var - v1))), method="qmc-sobol")


def rel_mse(estimates, truth, aggregate: str = "mean") -> float:
    """Mean (or median) over seeds of the squared relative error.

    ``estimates`` is (n_seeds,) for scalars or (n_seeds, k) for vectors;
    vector errors are averaged across components after aggregating over
    seeds.  Components with zero truth fall back to absolute error.
    """
    est = np.asarray(estimates, dtype=float)
    tr = np.atleast_1d(np.asarray(truth, dtype=float))
    if est.ndim == 1 and tr.size == 1:
        est = est[:, None]
    if est.shape[1] != tr.size:
        raise ValueError("estimate/truth shapes do not match")
    if np.any(tr == 0.0):
        import logging
        logging.getLogger(__name__).warning(
            "zero-truth component: absolute squared error used there")
    denom = np.where(tr == 0.0, 1.0, tr)
    sq = ((est - tr) / denom) ** 2
    agg = np.mean if aggregate == "mean" else np.median
    per_component = agg(sq, axis=0)
    return float(np.mean(per_component))
