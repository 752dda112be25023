"""Acquisition functions for choosing the next node.

A_t(x) = pi_hat_t(x)^alpha * D_t(x)^beta, where the diversity term D is
the minimum p-norm distance to the current nodes or the GP posterior
variance.  A_t vanishes at every current node and is evaluated in the
log domain; maximizing it never touches the true target (unless the
expensive variant is explicitly requested).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .interpolant import InterpolantModel, UnsupportedKernelError, predict_shifted
from .kernels import gaussian_cross_matrix, nearest_node
from .targets import BoxSupport, TargetDensity


def schedule_eval(schedule, t: int) -> float:
    """Resolve an exponent schedule at iteration t >= 1.

    Accepts a constant, a ('reciprocal', c) pair meaning c/t, a sequence
    indexed by t (clamped at its end), or a callable of t.
    """
    if t < 1:
        raise ValueError("iteration index starts at 1")
    if isinstance(schedule, (int, float)):
        return float(schedule)
    if callable(schedule):
        return float(schedule(t))
    if isinstance(schedule, tuple) and len(schedule) == 2 and schedule[0] == "reciprocal":
        return float(schedule[1]) / t
    if isinstance(schedule, (list, np.ndarray)):
        return float(schedule[min(t - 1, len(schedule) - 1)])
    raise ValueError(f"unsupported schedule {schedule!r}")


@dataclass(frozen=True)
class AcquisitionSpec:
    """Tempered acquisition pi_hat^alpha * D^beta.

    ``alpha`` and ``beta_exp`` may be schedules (see schedule_eval).
    ``diversity`` is 'min-distance' (any kernel) or 'gp-variance'
    (Gaussian only).  ``include_f`` optionally multiplies by |f(x)|.
    ``expensive`` switches pi_hat for the true target inside the search,
    spending one evaluation per candidate; off by default.
    """

    diversity: str = "min-distance"
    alpha: object = 1.0
    beta_exp: object = 1.0
    p: float = 2.0
    include_f: Callable[[np.ndarray], np.ndarray] | None = None
    expensive: bool = False

    def exponents(self, t: int) -> tuple[float, float]:
        return schedule_eval(self.alpha, t), schedule_eval(self.beta_exp, t)


@dataclass
class AcquisitionBudget:
    """Search effort: Sobol starts, refined leaders, total refine steps."""

    n_starts: int = 512
    top_k: int = 8
    refine_steps: int = 200


class _BatchScorer:
    """log A_t over candidate batches, with per-call shared structures.

    For NN models a single nearest-node query provides both the
    surrogate value (nearest node's target value) and the min-distance
    diversity term; the k-d tree is built once per maximization.
    """

    def __init__(self, spec: AcquisitionSpec, model: InterpolantModel, t: int,
                 target: TargetDensity | None = None, shifted: bool = True):
        self.spec = spec
        self.model = model
        self.alpha, self.beta = spec.exponents(t)
        self.target = target
        self.shifted = shifted
        if spec.diversity == "gp-variance" and not model.is_gaussian:
            raise UnsupportedKernelError("gp-variance diversity needs a Gaussian-kernel model")
        self._tree = None
        if not model.is_gaussian or spec.diversity == "min-distance":
            if model.n_nodes >= 32:
                from scipy.spatial import cKDTree
                self._tree = cKDTree(model.nodes)

    def _query(self, xs: np.ndarray):
        if self._tree is not None:
            dist, idx = self._tree.query(xs, p=self.spec.p)
            return np.atleast_1d(idx), np.atleast_1d(dist)
        idx, dist = nearest_node(self.model.nodes, xs, p=self.spec.p)
        return np.atleast_1d(idx), np.atleast_1d(dist)

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        spec, model = self.spec, self.model
        log_a = np.zeros(xs.shape[0])
        idx = dist = None
        if not model.is_gaussian and (self.alpha != 0.0 or spec.diversity == "min-distance"):
            idx, dist = self._query(xs)

        if self.alpha != 0.0:
            if spec.expensive:
                if self.target is None:
                    raise ValueError("expensive acquisition requires the true target")
                log_pi = np.array([self.target.log_eval(x) for x in xs]) - model.shift
            elif model.is_gaussian:
                v = gaussian_cross_matrix(model.kernel, xs, model.nodes) @ model.beta
                with np.errstate(divide="ignore", invalid="ignore"):
                    log_pi = np.where(v > 0, np.log(np.maximum(v, 1e-300)), -np.inf)
            else:
                v = model.values[idx]
                with np.errstate(divide="ignore"):
                    log_pi = np.where(v > 0, np.log(np.maximum(v, 1e-300)), -np.inf)
            if not self.shifted:
                log_pi = log_pi + model.shift
            log_a = log_a + self.alpha * log_pi

        if self.beta != 0.0:
            if spec.diversity == "min-distance":
                if dist is None:
                    _, dist = self._query(xs)
                with np.errstate(divide="ignore"):
                    log_d = np.log(dist)
            else:
                from .interpolant import gp_variance
                v = np.atleast_1d(gp_variance(model, xs))
                with np.errstate(divide="ignore"):
                    log_d = np.log(v)
            log_a = log_a + self.beta * log_d

        if spec.include_f is not None:
            with np.errstate(divide="ignore"):
                log_a = log_a + np.log(np.abs(np.asarray(spec.include_f(xs))))
        return log_a


def acquisition_eval(spec: AcquisitionSpec, model: InterpolantModel, x: np.ndarray,
                     t: int = 1, target: TargetDensity | None = None) -> np.ndarray | float:
    """A_t(x) on the original scale; exactly 0 at every current node."""
    scorer = _BatchScorer(spec, model, t, target=target, shifted=False)
    out = np.exp(scorer(np.asarray(x, dtype=float)))
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def _lexicographic_best(xs: np.ndarray, scores: np.ndarray) -> np.ndarray:
    best = np.max(scores)
    winners = np.flatnonzero(scores == best)
    if winners.size == 1:
        return xs[winners[0]]
    rows = xs[winners]
    order = np.lexsort(rows.T[::-1])
    return rows[order[0]]


def acquisition_maximize(spec: AcquisitionSpec, model: InterpolantModel,
                         support: BoxSupport, budget: AcquisitionBudget | int | None = None,
                         rng: np.random.Generator | None = None, t: int = 1,
                         target: TargetDensity | None = None,
                         return_value: bool = False):
    """Maximize A_t over the box: Sobol multi-start plus pattern refinement.

    Candidates are ``n_starts`` scrambled-Sobol points and one
    perturbation of each current node; the ``top_k`` leaders are refined
    by coordinate pattern search with a shrinking step.  Deterministic
    given the rng.  Never evaluates the true target unless the spec is
    marked expensive.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if budget is None:
        budget = AcquisitionBudget()
    elif isinstance(budget, int):
        if budget < 1:
            raise ValueError("budget must allow at least one candidate")
        budget = AcquisitionBudget(n_starts=budget)

    seed = int(rng.integers(0, 2 ** 31 - 1))
    cands = [support.sample_sobol(budget.n_starts, seed)]

    nodes = model.nodes
    n = nodes.shape[0]
    if n >= 1:
        take = min(n, budget.n_starts)
        sel = np.arange(n) if take == n else rng.choice(n, size=take, replace=False)
        if n >= 2:
            from scipy.spatial import cKDTree
            dsel, _ = cKDTree(nodes).query(nodes[sel], k=2)
            scale = dsel[:, 1][:, None]
        else:
            scale = 0.05 * support.widths[None, :]
        pert = nodes[sel] + 0.5 * scale * rng.standard_normal((take, nodes.shape[1]))
        cands.append(support.clip(pert))
    xs = np.vstack(cands)

    scorer = _BatchScorer(spec, model, t, target=target)
    scores = scorer(xs)
    if not np.any(np.isfinite(scores)):
        x = support.sample_uniform(1, rng)[0]
        return (x, float("-inf")) if return_value else x

    top_k = min(budget.top_k, xs.shape[0])
    leaders = np.argsort(scores)[::-1][:top_k]
    pts = xs[leaders].copy()
    vals = scores[leaders].copy()
    steps = np.tile(0.05 * support.widths, (top_k, 1))
    n_rounds = max(1, budget.refine_steps // max(top_k, 1))
    d = support.dim
    axes = np.arange(d)
    for _ in range(n_rounds):
        # propose +/- step along every axis for every leader
        moves = np.zeros((top_k, 2 * d, d))
        moves[:, axes, axes] = steps
        moves[:, d + axes, axes] = -steps
        props = support.clip(pts[:, None, :] + moves).reshape(-1, d)
        pvals = scorer(props).reshape(top_k, 2 * d)
        best = np.argmax(pvals, axis=1)
        bvals = pvals[np.arange(top_k), best]
        improved = bvals > vals
        pts[improved] = props.reshape(top_k, 2 * d, d)[improved, best[improved]]
        vals[improved] = bvals[improved]
        steps[~improved] *= 0.5
    x = _lexicographic_best(pts, vals)
    if return_value:
        return x, float(np.max(vals))
    return x
