"""Kernel bases for the interpolant: Gaussian RBFs and NN/Voronoi indicators.

The Gaussian family is isotropic and normalized (Sigma = h^2 I, unit
integral), so each kernel's measure is C_i = 1 and per-kernel moment
integrals are available in closed form or by Gauss-Hermite quadrature.
The NN family partitions the box into Voronoi regions; the measures
C_i = |R_i| are estimated by assigning MC or Sobol probes to their
nearest node.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .targets import BoxSupport

# Exhaustive nearest-node scan below this node count; k-d tree above.
BRUTE_FORCE_MAX_NODES = 1024


@dataclass(frozen=True)
class GaussianKernelSpec:
    """Isotropic Gaussian kernel N(x | center, h^2 I)."""

    bandwidth: float
    dim: int
    normalized: bool = True

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    @property
    def peak(self) -> float:
        """Kernel value at its center, (2 pi)^(-d/2) h^(-d)."""
        return float((2.0 * np.pi) ** (-0.5 * self.dim) * self.bandwidth ** (-self.dim))

    def with_bandwidth(self, h: float) -> "GaussianKernelSpec":
        return GaussianKernelSpec(float(h), self.dim, self.normalized)


@dataclass(frozen=True)
class NnKernelSpec:
    """Nearest-neighbor indicator kernel under a p-norm on a box."""

    support: BoxSupport
    p: float = 2.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p-norm order must be >= 1, got {self.p}")

    @property
    def dim(self) -> int:
        return self.support.dim


def gaussian_eval(spec: GaussianKernelSpec, x: np.ndarray, center: np.ndarray) -> np.ndarray | float:
    """k_G(x, center); x may be (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    if x.shape[-1] != spec.dim or center.shape[-1] != spec.dim:
        raise ValueError("dimension mismatch between kernel spec and inputs")
    sq = np.sum((x - center) ** 2, axis=-1)
    val = spec.peak * np.exp(-0.5 * sq / spec.bandwidth ** 2)
    return val if np.ndim(val) else float(val)


def gaussian_cross_matrix(spec: GaussianKernelSpec, xs: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Matrix k_G(xs_a, centers_b), shape (len(xs), len(centers))."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    # ||a-b||^2 = ||a||^2 + ||b||^2 - 2 a.b, clipped against roundoff
    sq = (np.sum(xs ** 2, axis=1)[:, None] + np.sum(centers ** 2, axis=1)[None, :]
          - 2.0 * xs @ centers.T)
    np.maximum(sq, 0.0, out=sq)
    return spec.peak * np.exp(-0.5 * sq / spec.bandwidth ** 2)


def nearest_node(nodes: np.ndarray, x: np.ndarray, p: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Index of and distance to the nearest node for each query point.

    Ties go to the lowest node index.  Exhaustive scan for small node
    sets, k-d tree above BRUTE_FORCE_MAX_NODES.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    n = nodes.shape[0]
    if n == 0:
        raise ValueError("empty node set")
    if n <= BRUTE_FORCE_MAX_NODES:
        from scipy.spatial.distance import cdist
        idx = np.empty(xs.shape[0], dtype=np.intp)
        dist = np.empty(xs.shape[0])
        chunk = max(1, int(4_000_000 // max(n, 1)))
        for s in range(0, xs.shape[0], chunk):
            block = xs[s:s + chunk]
            if p == 2.0:
                d = cdist(block, nodes, "sqeuclidean")
            elif np.isinf(p):
                d = cdist(block, nodes, "chebyshev")
            else:
                d = cdist(block, nodes, "minkowski", p=p)
            ii = np.argmin(d, axis=1)
            idx[s:s + chunk] = ii
            dsel = d[np.arange(d.shape[0]), ii]
            dist[s:s + chunk] = np.sqrt(dsel) if p == 2.0 else dsel
    else:
        from scipy.spatial import cKDTree
        tree = cKDTree(nodes)
        dist, idx = tree.query(xs, p=p)
    if single:
        return idx[0], float(dist[0])
    return idx, dist


def nn_eval(spec: NnKernelSpec, x: np.ndarray, nodes: np.ndarray, i: int) -> int:
    """Indicator of the i-th Voronoi region: 1 iff node i is nearest to x."""
    idx, _ = nearest_node(nodes, np.asarray(x, dtype=float), p=spec.p)
    return int(idx == i)


def gaussian_moment_integral(spec: GaussianKernelSpec, center: np.ndarray, r: int) -> np.ndarray:
    """Componentwise integral of x^r against the kernel at ``center``.

    r=1 gives the center itself; r=2 gives center^2 + h^2 per component.
    """
    center = np.asarray(center, dtype=float)
    if r == 1:
        return center.copy()
    if r == 2:
        return center ** 2 + spec.bandwidth ** 2
    raise ValueError(f"closed-form moments support r in {{1, 2}}, got r={r}; "
                     "use gauss_hermite_integral for other integrands")


def gauss_hermite_template(spec: GaussianKernelSpec, m_per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Shared tensor-product GH nodes (centered at 0) and normalized weights.

    The nodes for kernel i are obtained by translating this single
    template by x_i.  Weights sum to one.
    """
    if m_per_dim < 1:
        raise ValueError("m_per_dim must be >= 1")
    xi, w = np.polynomial.hermite.hermgauss(m_per_dim)
    z1 = np.sqrt(2.0) * spec.bandwidth * xi          # nodes for N(0, h^2)
    w1 = w / np.sqrt(np.pi)                          # normalized 1-D weights
    grids = np.meshgrid(*([z1] * spec.dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w1] * spec.dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def gauss_hermite_integral(spec: GaussianKernelSpec, center: np.ndarray,
                           f: Callable[[np.ndarray], np.ndarray], m_per_dim: int = 5) -> float | np.ndarray:
    """Integral of f against the kernel at ``center`` by tensor-product GH.

    ``f`` maps a batch (m, d) to (m,) or (m, k); the result follows f's
    output shape.
    """
    nodes, weights = gauss_hermite_template(spec, m_per_dim)
    vals = np.asarray(f(nodes + np.asarray(center, dtype=float)))
    if vals.ndim == 1:
        return float(np.dot(weights, vals))
    return weights @ vals


def node_digest(nodes: np.ndarray) -> str:
    """Stable fingerprint of a node set, used to detect stale Voronoi builds."""
    nodes = np.ascontiguousarray(np.asarray(nodes, dtype=float))
    h = hashlib.sha1(nodes.tobytes())
    h.update(str(nodes.shape).encode())
    return h.hexdigest()


@dataclass
class VoronoiApprox:
    """Probe-based approximation of the Voronoi partition of the box.

    ``assignment[m]`` is the nearest node of probe m; ``measures[i]``
    approximates C_i = |R_i| as (|U_i| / M) |X|.
    """

    probes: np.ndarray
    assignment: np.ndarray
    counts: np.ndarray
    measures: np.ndarray
    box_measure: float
    digest: str
    sampler: str

    @property
    def n_probes(self) -> int:
        return self.probes.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.counts.size


def voronoi_build(spec: NnKernelSpec, nodes: np.ndarray, M: int,
                  sampler: str = "sobol", rng: np.random.Generator | None = None) -> VoronoiApprox:
    """Assign M uniform probes (Sobol or MC) to their nearest nodes.

    Returns counts |U_i| and measures C_i ~= (|U_i|/M)|X| whose sum is
    exactly |X|.  Deterministic given the sampler and the rng state.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if M < 1:
        raise ValueError("M must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    if sampler == "sobol":
        seed = int(rng.integers(0, 2 ** 31 - 1))
        probes = spec.support.sample_sobol(M, seed)
    elif sampler == "mc":
        probes = spec.support.sample_uniform(M, rng)
    else:
        raise ValueError(f"unknown sampler {sampler!r}; expected 'sobol' or 'mc'")
    assignment, _ = nearest_node(nodes, probes, p=spec.p)
    counts = np.bincount(assignment, minlength=nodes.shape[0])
    box = spec.support.measure()
    measures = counts * (box / M)
    return VoronoiApprox(probes=probes, assignment=np.asarray(assignment),
                         counts=counts, measures=measures, box_measure=box,
                         digest=node_digest(nodes), sampler=sampler)
