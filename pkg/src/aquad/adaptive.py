"""The adaptive quadrature driver: fit, acquire, evaluate, extend.

Runs the GK-AQ / NN-AQ loop: starting from N0 nodes, each iteration
maximizes the cheap acquisition, spends exactly one true-target
evaluation at the winner, and extends the interpolant, so a T-iteration
run costs E = N0 + T evaluations (presample budget + T in presample
mode).  Diagnostics (fill and separation distance, optional Z
snapshots) are maintained incrementally against fixed probe sets, and
every iteration can be checkpointed for resumable long runs.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .acquisition import AcquisitionBudget, AcquisitionSpec, acquisition_maximize
from .interpolant import (
    InterpolantModel,
    extend,
    fit,
    model_from_json,
    model_to_json,
    separation_distance,
)
from .kernels import GaussianKernelSpec, NnKernelSpec
from .quadrature import EstimateReport, MomentRequest, estimate
from .targets import EvalBudgetExceededError, TargetDensity
from .tuner import make_bandwidth_grid, tune_bandwidth_zhat

logger = logging.getLogger(__name__)

DEFAULT_REQUESTS = (MomentRequest.power(1), MomentRequest.power(2))


@dataclass
class RunConfig:
    """Everything needed to reproduce one adaptive run."""

    kernel: str = "nn"                 # 'nn' or 'gaussian'
    n_init: int = 10
    n_iter: int = 60                   # T; final node count is n_init + T
    seed: int = 0
    init_mode: str = "uniform"         # 'uniform' | 'user' | 'presample'
    presample_budget: int = 0
    presample_keep_best: int = 1
    presample_keep_random: int = 9
    bandwidth: float | None = None     # Gaussian h0; None = initial separation distance
    jitter: float | None = None
    p_norm: float = 2.0
    tune_bandwidth: bool = True        # Gaussian: Z_hat-heuristic retuning
    retune_every: int = 10             # 0 = only at the final report
    tune_grid_size: int = 40
    node_selection: str = "acquisition"  # 'acquisition' | 'uniform' (the NN-U variant)
    alpha: object = 1.0
    beta_exp: object = 1.0
    diversity: str | None = None       # default: min-distance (NN), gp-variance (Gaussian)
    route: str = "auto"
    m_probes: int = 100_000
    sampler: str = "sobol"
    snapshot_probes: int = 0           # per-iteration Z snapshot probes; 0 disables
    fill_probes: int = 4096
    n_starts: int = 512
    refine_steps: int = 200

    def acquisition_spec(self) -> AcquisitionSpec:
        diversity = self.diversity
        if diversity is None:
            diversity = "gp-variance" if self.kernel == "gaussian" else "min-distance"
        return AcquisitionSpec(diversity=diversity, alpha=self.alpha,
                               beta_exp=self.beta_exp, p=self.p_norm)

    def budget(self) -> AcquisitionBudget:
        return AcquisitionBudget(n_starts=self.n_starts, refine_steps=self.refine_steps)

    def expected_evals(self) -> int:
        base = self.presample_budget if self.init_mode == "presample" else self.n_init
        return base + self.n_iter

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("alpha", "beta_exp"):
            if isinstance(d[k], tuple):
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for k in ("alpha", "beta_exp"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class RunTrace:
    """Per-iteration records plus the final estimates of one run."""

    config: RunConfig
    records: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    final: EstimateReport | None = None
    model: InterpolantModel | None = None
    eval_count: int = 0
    completed: bool = True

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    def save_report(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.final.to_json())


def presample_init(target: TargetDensity, budget: int, keep_best: int, keep_random: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list]:
    """Draw ``budget`` prior samples (all counted), keep the best plus extras.

    Streams in chunks so multi-million-draw budgets stay memory-safe:
    the top ``keep_best`` values are tracked exactly and ``keep_random``
    extras come from a reservoir over all draws.  Exact duplicates are
    dropped before returning.
    """
    if budget < keep_best + keep_random:
        raise ValueError("presample budget smaller than the number of kept nodes")
    dim = target.dim
    top: list = []                                   # (log, x, aux), ascending
    res_x = np.empty((keep_random, dim))
    res_logs = np.empty(keep_random)
    res_aux: list = [None] * keep_random
    seen = 0
    chunk = 50_000
    remaining = budget
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        xs = target.support.sample_uniform(n, rng)
        logs = target.log_eval_many(xs)
        a = target.last_aux
        if a is None:
            aux = [None] * n
        elif isinstance(a, list):
            aux = a
        else:
            aux = [float(v) if np.isfinite(v) else None for v in np.asarray(a)]
        for j in np.argsort(logs)[::-1][:keep_best]:
            if len(top) < keep_best:
                top.append((float(logs[j]), xs[j].copy(), aux[j]))
                top.sort(key=lambda r: r[0])
            elif logs[j] > top[0][0]:
                top[0] = (float(logs[j]), xs[j].copy(), aux[j])
                top.sort(key=lambda r: r[0])
        if keep_random > 0:
            # reservoir sampling (algorithm R) over the full stream
            take = min(keep_random - seen, n) if seen < keep_random else 0
            for j in range(take):
                res_x[seen + j] = xs[j]
                res_logs[seen + j] = logs[j]
                res_aux[seen + j] = aux[j]
            for j in range(take, n):
                k = int(rng.integers(0, seen + j + 1))
                if k < keep_random:
                    res_x[k] = xs[j]
                    res_logs[k] = logs[j]
                    res_aux[k] = aux[j]
        seen += n

    top.sort(key=lambda r: r[0], reverse=True)
    nodes = np.vstack([np.array([r[1] for r in top]).reshape(-1, dim),
                       res_x[:min(keep_random, seen)]])
    kept_logs = np.concatenate([[r[0] for r in top], res_logs[:min(keep_random, seen)]])
    kept_aux = [r[2] for r in top] + res_aux[:min(keep_random, seen)]
    _, unique_idx = np.unique(nodes, axis=0, return_index=True)
    unique_idx = np.sort(unique_idx)
    return nodes[unique_idx], kept_logs[unique_idx], [kept_aux[i] for i in unique_idx]


class _Diagnostics:
    """Fixed-probe running estimates of fill distance and Z snapshots."""

    def __init__(self, config: RunConfig, target: TargetDensity, nodes: np.ndarray,
                 rng: np.random.Generator):
        support = target.support
        self.probes = support.sample_sobol(config.fill_probes, int(rng.integers(0, 2 ** 31 - 1)))
        from .kernels import nearest_node
        _, self.min_dist = nearest_node(nodes, self.probes)
        self.box = support.measure()
        self.snap = None
        if config.snapshot_probes > 0:
            pts = support.sample_sobol(config.snapshot_probes, int(rng.integers(0, 2 ** 31 - 1)))
            idx, dist = nearest_node(nodes, pts)
            self.snap = (pts, np.asarray(idx), dist)

    def add_node(self, x: np.ndarray):
        d = np.linalg.norm(self.probes - x, axis=1)
        np.minimum(self.min_dist, d, out=self.min_dist)
        if self.snap is not None:
            pts, idx, dist = self.snap
            dn = np.linalg.norm(pts - x, axis=1)
            closer = dn < dist
            idx[closer] = -1          # sentinel: new node, re-indexed by caller
            dist[closer] = dn[closer]

    @property
    def fill_estimate(self) -> float:
        return float(np.max(self.min_dist))

    def z_snapshot(self, model: InterpolantModel) -> float | None:
        if self.snap is None:
            return None
        if model.is_gaussian:
            return float(np.exp(model.shift) * np.sum(model.beta))
        pts, idx, _ = self.snap
        vals = model.values[idx]
        return float(np.exp(model.shift) * self.box * np.mean(vals))


def _resolve_snapshot_indices(diag: _Diagnostics, new_index: int):
    if diag.snap is not None:
        _, idx, _ = diag.snap
        idx[idx == -1] = new_index


def _initial_nodes(config: RunConfig, target: TargetDensity, rng: np.random.Generator,
                   init_nodes: np.ndarray | None):
    if config.init_mode == "user":
        if init_nodes is None:
            raise ValueError("init_mode 'user' requires init_nodes")
        nodes = np.atleast_2d(np.asarray(init_nodes, dtype=float))
        logs = np.empty(nodes.shape[0])
        aux = []
        for i in range(nodes.shape[0]):
            logs[i] = target.log_eval(nodes[i])
            aux.append(target.last_aux)
        return nodes, logs, aux
    if config.init_mode == "presample":
        return presample_init(target, config.presample_budget,
                              config.presample_keep_best, config.presample_keep_random, rng)
    nodes = target.support.sample_uniform(config.n_init, rng)
    while np.unique(nodes, axis=0).shape[0] < nodes.shape[0]:
        nodes = target.support.sample_uniform(config.n_init, rng)
    logs = np.empty(nodes.shape[0])
    aux = []
    for i in range(nodes.shape[0]):
        logs[i] = target.log_eval(nodes[i])
        aux.append(target.last_aux)
    return nodes, logs, aux


def _build_model(config: RunConfig, target: TargetDensity, nodes, logs) -> InterpolantModel:
    if config.kernel == "nn":
        spec = NnKernelSpec(target.support, p=config.p_norm)
        return fit(nodes, logs, spec)
    if config.kernel != "gaussian":
        raise ValueError(f"unknown kernel {config.kernel!r}")
    h = config.bandwidth
    if h is None:
        h = separation_distance(nodes) if nodes.shape[0] >= 2 else target.support.diameter() / 10.0
    spec = GaussianKernelSpec(float(h), target.dim)
    return fit(nodes, logs, spec, jitter=config.jitter)


def _retune(config: RunConfig, target: TargetDensity, model: InterpolantModel) -> InterpolantModel:
    grid = make_bandwidth_grid(model.nodes, target.support, n=config.tune_grid_size)
    scan = tune_bandwidth_zhat(model.nodes, model.log_values, grid, jitter=config.jitter)
    spec = GaussianKernelSpec(scan.selected, target.dim)
    return fit(model.nodes, model.log_values, spec, jitter=config.jitter)


def run(config: RunConfig, target: TargetDensity,
        requests: Sequence[MomentRequest] = DEFAULT_REQUESTS,
        init_nodes: np.ndarray | None = None,
        checkpoint_path: str | None = None) -> RunTrace:
    """Execute the adaptive loop and return the trace with final estimates.

    Exactly one true evaluation is spent per iteration; acquisition and
    quadrature consume none.  Identical config and seed reproduce the
    trace byte for byte.  If ``checkpoint_path`` exists the run resumes
    from it; on budget exhaustion a partial, resumable trace is
    returned.
    """
    ss = np.random.SeedSequence(config.seed)
    rng_init, rng_acq, rng_est, rng_diag = [np.random.default_rng(s) for s in ss.spawn(4)]
    trace = RunTrace(config=config)
    prior_evals = 0
    start_t = 1

    if checkpoint_path and os.path.exists(checkpoint_path):
        state = json.loads(open(checkpoint_path, "r", encoding="utf-8").read())
        model = model_from_json(state["model"])
        trace.records = state["records"]
        trace.aux = state["aux"]
        prior_evals = state["eval_count"]
        start_t = state["t"] + 1
        rng_acq.bit_generator.state = state["rng_acq"]
        rng_est.bit_generator.state = state["rng_est"]
        diag = _Diagnostics(config, target, model.nodes, rng_diag)
        logger.info("resumed from %s at t=%d", checkpoint_path, state["t"])
    else:
        nodes, logs, aux = _initial_nodes(config, target, rng_init, init_nodes)
        model = _build_model(config, target, nodes, logs)
        trace.aux = list(aux)
        diag = _Diagnostics(config, target, model.nodes, rng_diag)
        sep = separation_distance(model.nodes) if model.n_nodes >= 2 else float("inf")
        trace.records.append({"t": 0, "node": None, "log_pi": None, "acq_log": None,
                              "fill_est": diag.fill_estimate, "separation": sep,
                              "z_snapshot": diag.z_snapshot(model)})

    spec = config.acquisition_spec()
    budget = config.budget()
    sep = trace.records[-1]["separation"] if trace.records else float("inf")
    diam = target.support.diameter()

    for t in range(start_t, config.n_iter + 1):
        # states at the top of the iteration, so an interrupted iteration
        # replays identically after a resume
        acq_state = rng_acq.bit_generator.state
        est_state = rng_est.bit_generator.state
        if config.node_selection == "uniform":
            x_new = target.support.sample_uniform(1, rng_acq)[0]
            acq_log = None
        else:
            x_new, acq_log = acquisition_maximize(spec, model, target.support, budget,
                                                  rng_acq, t=t, return_value=True)

        from .kernels import nearest_node
        _, dmin = nearest_node(model.nodes, x_new)
        tries = 0
        while dmin <= 1e-12 * diam and tries < 8:
            logger.warning("acquisition returned an existing node at t=%d; perturbing", t)
            x_new = target.support.clip(x_new + 1e-6 * diam * rng_acq.standard_normal(target.dim))
            _, dmin = nearest_node(model.nodes, x_new)
            tries += 1

        try:
            log_pi = target.log_eval(x_new)
        except EvalBudgetExceededError:
            trace.completed = False
            if checkpoint_path:
                rng_acq.bit_generator.state = acq_state
                rng_est.bit_generator.state = est_state
                _save_checkpoint(checkpoint_path, config, model, trace,
                                 prior_evals + target.eval_count, t - 1, rng_acq, rng_est)
            logger.warning("budget exhausted at t=%d; returning partial trace", t)
            break

        model = extend(model, x_new, log_pi)
        trace.aux.append(target.last_aux)
        sep = min(sep, float(dmin))
        diag.add_node(x_new)
        _resolve_snapshot_indices(diag, model.n_nodes - 1)
        trace.records.append({"t": t, "node": x_new.tolist(), "log_pi": float(log_pi),
                              "acq_log": acq_log, "fill_est": diag.fill_estimate,
                              "separation": sep, "z_snapshot": diag.z_snapshot(model)})

        if (config.kernel == "gaussian" and config.tune_bandwidth
                and config.retune_every > 0 and t % config.retune_every == 0):
            model = _retune(config, target, model)

        if checkpoint_path:
            _save_checkpoint(checkpoint_path, config, model, trace,
                             prior_evals + target.eval_count, t, rng_acq, rng_est)

    if config.kernel == "gaussian" and config.tune_bandwidth and trace.completed:
        model = _retune(config, target, model)

    before = target.eval_count
    report = estimate(model, requests, route=config.route, M=config.m_probes,
                      rng=rng_est, sampler=config.sampler)
    assert target.eval_count == before, "quadrature must not consume target evaluations"

    report.eval_count = prior_evals + target.eval_count
    report.diagnostics.update({
        "fill_est": diag.fill_estimate,
        "separation": sep if np.isfinite(sep) else None,
        "n_nodes": model.n_nodes,
        "shift": model.shift,
        "bandwidth": model.kernel.bandwidth if model.is_gaussian else None,
    })
    trace.final = report
    trace.model = model
    trace.eval_count = prior_evals + target.eval_count
    return trace


def _save_checkpoint(path, config, model, trace, eval_count, t, rng_acq, rng_est):
    state = {
        "config": config.to_dict(),
        "model": model_to_json(model),
        "records": trace.records,
        "aux": trace.aux,
        "eval_count": eval_count,
        "t": t,
        "rng_acq": rng_acq.bit_generator.state,
        "rng_est": rng_est.bit_generator.state,
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(state, fh)
    os.replace(tmp, path)
