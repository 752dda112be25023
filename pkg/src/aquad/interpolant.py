"""Interpolant construction and incremental updates.

The surrogate is pi_hat(x) = sum_i beta_i k(x, x_i) with coefficients
solving K beta = d.  Target values are kept in the log domain with a
shared shift (the running maximum), so d holds exp(log pi - shift) and
every reported normalizing constant re-applies exp(shift).  Rescaling
pi by a constant rescales beta and Z_hat by the same constant and
leaves posterior expectations unchanged.

Gaussian models cache the inverse of the jittered kernel matrix and
grow it one node at a time through the bordered-matrix block formula;
NN models use the identity shortcut beta = d.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .kernels import (
    GaussianKernelSpec,
    NnKernelSpec,
    gaussian_cross_matrix,
    nearest_node,
)
from .targets import BoxSupport

logger = logging.getLogger(__name__)

# Relative jitter applied to the Gaussian kernel diagonal by default.
DEFAULT_JITTER_SCALE = 1e-4
# extend() falls back to a full refit when the Schur pivot drops below this.
SCHUR_PIVOT_SCALE = 1e-12


class DegenerateNodesError(ValueError):
    """Node set contains duplicates (separation distance zero)."""


class ConditioningError(RuntimeError):
    """The jittered kernel matrix is not numerically positive definite."""


class UnsupportedKernelError(TypeError):
    """Operation undefined for this kernel family."""


def default_jitter(spec: GaussianKernelSpec) -> float:
    return DEFAULT_JITTER_SCALE * spec.peak ** 2


@dataclass(frozen=True)
class InterpolantModel:
    """Fitted interpolant state; treat as immutable (extend returns a new one)."""

    kernel: GaussianKernelSpec | NnKernelSpec
    nodes: np.ndarray          # (N, d)
    log_values: np.ndarray     # (N,) raw log pi(x_i)
    shift: float               # shared log shift (max finite log value)
    values: np.ndarray         # (N,) exp(log_values - shift)
    beta: np.ndarray           # (N,) coefficients on the shifted scale
    jitter: float = 0.0
    k_inv: np.ndarray | None = None   # (N, N), Gaussian case only
    min_pivot: float = np.inf         # smallest Cholesky/Schur pivot seen

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.kernel, GaussianKernelSpec)


def _shift_of(log_values: np.ndarray) -> float:
    finite = log_values[np.isfinite(log_values)]
    return float(finite.max()) if finite.size else 0.0


def _check_distinct(nodes: np.ndarray):
    n = nodes.shape[0]
    if n < 2:
        return
    if n <= 2048:
        from scipy.spatial.distance import pdist
        if np.min(pdist(nodes)) == 0.0:
            raise DegenerateNodesError("duplicate nodes: separation distance is zero")
    else:
        from scipy.spatial import cKDTree
        d, _ = cKDTree(nodes).query(nodes, k=2)
        if np.min(d[:, 1]) == 0.0:
            raise DegenerateNodesError("duplicate nodes: separation distance is zero")


def fit(nodes: np.ndarray, log_values: np.ndarray,
        kernel: GaussianKernelSpec | NnKernelSpec,
        jitter: float | None = None) -> InterpolantModel:
    """Fit the interpolant from scratch.

    Gaussian kernels solve (K + jitter I) beta = d through a Cholesky
    factorization and cache the explicit inverse for later extension;
    NN kernels set beta = d directly.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    log_values = np.asarray(log_values, dtype=float).ravel()
    if nodes.shape[0] != log_values.size:
        raise ValueError("nodes and log_values must have matching lengths")
    if nodes.shape[0] < 1:
        raise ValueError("at least one node is required")
    _check_distinct(nodes)

    shift = _shift_of(log_values)
    values = np.exp(log_values - shift)

    if isinstance(kernel, NnKernelSpec):
        return InterpolantModel(kernel=kernel, nodes=nodes, log_values=log_values,
                                shift=shift, values=values, beta=values.copy())

    if jitter is None:
        jitter = default_jitter(kernel)
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = gaussian_cross_matrix(kernel, nodes, nodes)
    K[np.diag_indices_from(K)] += jitter
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(K)[0])
        raise ConditioningError(
            f"kernel matrix not positive definite (smallest pivot {smallest:.3e}); "
            f"increase the jitter or the node separation") from None
    min_pivot = float(np.min(np.diag(L)) ** 2)
    ident = np.eye(nodes.shape[0])
    linv = np.linalg.solve(L, ident)
    k_inv = linv.T @ linv
    beta = k_inv @ values
    return InterpolantModel(kernel=kernel, nodes=nodes, log_values=log_values,
                            shift=shift, values=values, beta=beta, jitter=float(jitter),
                            k_inv=k_inv, min_pivot=min_pivot)


def _rescaled(log_values, shift, new_log):
    """Updated (shift, values) after appending new_log."""
    new_shift = max(shift, new_log) if np.isfinite(new_log) else shift
    logs = np.append(log_values, new_log)
    return new_shift, np.exp(logs - new_shift), logs


def extend(model: InterpolantModel, new_node: np.ndarray, new_log_value: float) -> InterpolantModel:
    """Add one node, updating K^{-1} through the bordered-matrix formula.

    Falls back to a full refit with a ten-fold jitter increase when the
    Schur pivot collapses (near-duplicate node).  Returns a new model.
    """
    new_node = np.asarray(new_node, dtype=float).ravel()
    if new_node.size != model.dim:
        raise ValueError("new node has wrong dimension")
    _, dmin = nearest_node(model.nodes, new_node)
    if dmin == 0.0:
        raise DegenerateNodesError("new node duplicates an existing node")

    nodes = np.vstack([model.nodes, new_node])
    new_shift, values, log_values = _rescaled(model.log_values, model.shift, float(new_log_value))

    if not model.is_gaussian:
        return replace(model, nodes=nodes, log_values=log_values, shift=new_shift,
                       values=values, beta=values.copy())

    spec = model.kernel
    k_vec = gaussian_cross_matrix(spec, model.nodes, new_node[None, :]).ravel()
    k_self = spec.peak + model.jitter
    u = model.k_inv @ k_vec
    schur = k_self - float(k_vec @ u)
    if schur <= SCHUR_PIVOT_SCALE * spec.peak:
        logger.warning("extend: Schur pivot %.3e collapsed at N=%d; refitting with "
                       "jitter %.3e", schur, model.n_nodes + 1, model.jitter * 10)
        return fit(nodes, log_values, spec, jitter=max(model.jitter, default_jitter(spec)) * 10.0)

    n = model.n_nodes
    k_inv = np.empty((n + 1, n + 1))
    k_inv[:n, :n] = model.k_inv + np.outer(u, u) / schur
    k_inv[:n, n] = -u / schur
    k_inv[n, :n] = -u / schur
    k_inv[n, n] = 1.0 / schur
    beta = k_inv @ values
    return replace(model, nodes=nodes, log_values=log_values, shift=new_shift,
                   values=values, beta=beta, k_inv=k_inv,
                   min_pivot=min(model.min_pivot, schur))


def predict_shifted(model: InterpolantModel, x: np.ndarray) -> np.ndarray | float:
    """pi_hat(x) on the shifted scale, i.e. pi_hat(x) / exp(shift)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if model.is_gaussian:
        out = gaussian_cross_matrix(model.kernel, xs, model.nodes) @ model.beta
    else:
        idx, _ = nearest_node(model.nodes, xs, p=model.kernel.p)
        out = model.values[np.atleast_1d(idx)]
    return float(out[0]) if single else out


def predict(model: InterpolantModel, x: np.ndarray) -> np.ndarray | float:
    """pi_hat(x) = sum_i beta_i k(x, x_i) on the original target scale."""
    return np.exp(model.shift) * predict_shifted(model, x)


def log_predict(model: InterpolantModel, x: np.ndarray) -> np.ndarray | float:
    """log pi_hat(x), with -inf wherever the surrogate is non-positive."""
    val = predict_shifted(model, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.asarray(val) > 0.0, np.log(np.maximum(val, 1e-300)), -np.inf)
    return model.shift + (float(out) if np.ndim(out) == 0 else out)


def gp_variance(model: InterpolantModel, x: np.ndarray) -> np.ndarray | float:
    """Posterior GP variance V(x) = k(x,x) - k(x)^T K^{-1} k(x), clamped at 0.

    Uses the jittered inverse, matching the coefficient solve.  Only
    defined for Gaussian kernels.
    """
    if not model.is_gaussian:
        raise UnsupportedKernelError("GP variance is undefined for NN/constant kernels")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    G = gaussian_cross_matrix(model.kernel, xs, model.nodes)
    quad = np.sum((G @ model.k_inv) * G, axis=1)
    v = np.maximum(model.kernel.peak - quad, 0.0)
    return float(v[0]) if single else v


def fill_distance(nodes: np.ndarray, support: BoxSupport, probes: int = 2 ** 14,
                  rng: np.random.Generator | None = None) -> float:
    """Sobol-probe estimate (a lower bound) of max_x min_i ||x - x_i||_2."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    seed = int(rng.integers(0, 2 ** 31 - 1))
    pts = support.sample_sobol(probes, seed)
    _, dist = nearest_node(np.atleast_2d(nodes), pts)
    return float(np.max(dist))


def separation_distance(nodes: np.ndarray) -> float:
    """Exact minimum pairwise node distance; requires at least two nodes."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if nodes.shape[0] < 2:
        raise ValueError("separation distance needs at least two nodes")
    if nodes.shape[0] <= 2048:
        from scipy.spatial.distance import pdist
        return float(np.min(pdist(nodes)))
    from scipy.spatial import cKDTree
    d, _ = cKDTree(nodes).query(nodes, k=2)
    return float(np.min(d[:, 1]))


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def model_to_json(model: InterpolantModel) -> str:
    """Serialize to JSON; doubles use shortest round-trip decimal encoding."""
    payload = {
        "kernel": "gaussian" if model.is_gaussian else "nn",
        "jitter": model.jitter,
        "shift": model.shift,
        "dim": model.dim,
        "nodes": model.nodes.ravel().tolist(),
        "log_values": model.log_values.tolist(),
        "beta": model.beta.tolist(),
    }
    if model.is_gaussian:
        payload["h"] = model.kernel.bandwidth
    else:
        payload["p"] = model.kernel.p
        payload["support"] = {"lower": model.kernel.support.lower.tolist(),
                              "upper": model.kernel.support.upper.tolist()}
    return json.dumps(payload)


def model_from_json(text: str) -> InterpolantModel:
    """Rebuild a model from its checkpoint; stored arrays are bit-exact."""
    obj = json.loads(text)
    dim = int(obj["dim"])
    nodes = np.asarray(obj["nodes"], dtype=float).reshape(-1, dim)
    log_values = np.asarray(obj["log_values"], dtype=float)
    beta = np.asarray(obj["beta"], dtype=float)
    shift = float(obj["shift"])
    values = np.exp(log_values - shift)
    if obj["kernel"] == "gaussian":
        spec = GaussianKernelSpec(float(obj["h"]), dim)
        model = fit(nodes, log_values, spec, jitter=float(obj["jitter"]))
        # keep the stored coefficients/shift so the round trip is bit-exact
        return replace(model, shift=shift, values=values, beta=beta)
    support = BoxSupport(np.asarray(obj["support"]["lower"]), np.asarray(obj["support"]["upper"]))
    spec = NnKernelSpec(support, p=float(obj["p"]))
    return InterpolantModel(kernel=spec, nodes=nodes, log_values=log_values,
                            shift=shift, values=values, beta=beta)
