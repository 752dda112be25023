"""Experiment orchestration: seed sweeps, metric tables, evidence profiles.

Reproduces the paper-style comparisons at desk scale: method-vs-budget
sweeps on the benchmark targets scored by Rel-MSE against an
independent oracle, and the exoplanet evidence-vs-noise profiles with
per-model curves.  Cells (method, E, seed) run in a process pool capped
by AQUAD_THREADS, each on its own seed stream; results are cached per
cell so interrupted experiments resume to byte-identical CSVs.
"""

from __future__ import annotations

import csv
import json
import os
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .adaptive import RunConfig, run
from .baselines import is_uniform, mh_chain
from .oracle import GridTruth, grid_truth, qmc_truth, rel_mse
from .quadrature import MomentRequest
from .targets import (
    BANANA_EXPERIMENT_PARAMS,
    BoxSupport,
    RvDataset,
    banana_log_density,
    banana_target,
    multimodal_target,
    rv_target,
    TWO_PI,
)

METRICS = ("relmse_z", "relmse_mean", "relmse_var")
KNOWN_METHODS = ("nn-aq", "nn-u", "nn-aq-diversity-only", "nn-aq-tempered",
                 "gk-aq", "is-uniform", "mh-i", "mh-rw1", "mh-rw2", "mh-rw5")


def worker_count() -> int:
    cap = os.environ.get("AQUAD_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


@dataclass
class ExperimentConfig:
    """One experiment: methods x budgets x seeds on a single target."""

    experiment_id: str
    target: str                        # 'banana2'..'banana5' | 'multimodal10'
    methods: list = field(default_factory=lambda: ["nn-aq", "is-uniform"])
    e_values: list = field(default_factory=lambda: [70])
    n_seeds: int = 100
    seed: int = 1
    m_probes: int = 100_000
    n_init: int = 10
    out_dir: str = "results"
    gk_retune_every: int = 10
    gk_diversity: str = "gp-variance"
    oracle_resolution: int = 1000
    oracle_qmc: int = 2 ** 22

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))


@dataclass
class ResultTable:
    """Long-format metric rows, one per (method, E, metric)."""

    rows: list = field(default_factory=list)

    def add(self, method: str, E: int, metric: str, value: float, seeds: int):
        self.rows.append({"method": method, "E": E, "metric": metric,
                          "value": value, "seeds": seeds})

    def get(self, method: str, E: int, metric: str) -> float:
        for r in self.rows:
            if r["method"] == method and r["E"] == E and r["metric"] == metric:
                return r["value"]
        raise KeyError((method, E, metric))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "E", "metric", "value", "seeds"])
            for r in self.rows:
                w.writerow([r["method"], r["E"], r["metric"], repr(float(r["value"])), r["seeds"]])

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        table = cls()
        with open(path, "r", newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                table.add(r["method"], int(r["E"]), r["metric"], float(r["value"]), int(r["seeds"]))
        return table


# ---------------------------------------------------------------------------
# Targets and their oracle truths
# ---------------------------------------------------------------------------

def make_target(name: str):
    if name.startswith("banana"):
        return banana_target(int(name.removeprefix("banana")))
    if name == "multimodal10":
        return multimodal_target()
    raise ValueError(f"unknown target {name!r}")


def oracle_truth(config: ExperimentConfig) -> GridTruth:
    """Ground truth for the experiment target, cached on disk."""
    path = Path(config.out_dir) / f"oracle_{config.target}.json"
    if path.exists():
        return GridTruth.from_json(path.read_text())
    truth = compute_truth(config.target, config.oracle_resolution, config.oracle_qmc)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(truth.to_json())
    return truth


def compute_truth(target_name: str, resolution: int = 1000, qmc_m: int = 2 ** 22) -> GridTruth:
    if target_name.startswith("banana"):
        d = int(target_name.removeprefix("banana"))
        fn = lambda xs: banana_log_density(xs, dim=d, **BANANA_EXPERIMENT_PARAMS)
        support = BoxSupport.cube(10.0, d)
        if d == 2:
            return grid_truth(fn, support, resolution)
        return qmc_truth(fn, support, qmc_m)
    if target_name == "multimodal10":
        # analytic: normalized mixture (box truncation ~1% documented)
        means = np.zeros((3, 10))
        means[0, 0], means[1, 0], means[2, :] = 5.0, -7.0, 1.0
        mean = means.mean(axis=0)
        ex2 = np.mean(means ** 2 + 16.0, axis=0)
        return GridTruth(resolution=0, z=1.0, mean=mean, var=ex2 - mean ** 2,
                         err_z=0.0, err_mean=0.0, err_var=0.0, method="analytic")
    raise ValueError(f"unknown target {target_name!r}")


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------

def cell_seed(master: int, method: str, E: int, seed_index: int) -> int:
    """Deterministic per-cell seed from (master, method, E, seed index)."""
    mix = np.random.SeedSequence([master, zlib.crc32(method.encode()), E, seed_index])
    return int(mix.generate_state(1)[0])

REQUESTS = (MomentRequest.power(1), MomentRequest.power(2))


def method_run_config(method: str, E: int, seed: int, config: ExperimentConfig) -> RunConfig:
    n_init = min(config.n_init, max(E - 1, 1))
    base = dict(n_init=n_init, n_iter=E - n_init, seed=seed, m_probes=config.m_probes)
    if method == "nn-aq":
        return RunConfig(kernel="nn", alpha=1.0, beta_exp=1.0, **base)
    if method == "nn-u":
        return RunConfig(kernel="nn", node_selection="uniform", **base)
    if method == "nn-aq-diversity-only":
        return RunConfig(kernel="nn", alpha=0.0, beta_exp=1.0, **base)
    if method == "nn-aq-tempered":
        return RunConfig(kernel="nn", alpha=1.0, beta_exp=("reciprocal", 200.0), **base)
    if method == "gk-aq":
        return RunConfig(kernel="gaussian", tune_bandwidth=True,
                         retune_every=config.gk_retune_every,
                         diversity=config.gk_diversity, **base)
    raise ValueError(f"{method!r} is not an adaptive method")


def run_cell(config: ExperimentConfig, method: str, E: int, seed_index: int) -> dict:
    """One (method, E, seed) cell; returns z/mean/var estimates and audit info."""
    seed = cell_seed(config.seed, method, E, seed_index)
    target = make_target(config.target)
    rng = np.random.default_rng(seed)
    out = {"method": method, "E": E, "seed_index": seed_index}
    if method == "is-uniform":
        rep = is_uniform(target, E, rng, REQUESTS)
    elif method == "mh-i":
        _, rep = mh_chain(target, "independent", E, rng, requests=REQUESTS)
    elif method.startswith("mh-rw"):
        v = float(method.removeprefix("mh-rw"))
        _, rep = mh_chain(target, "random-walk", E, rng, rw_scale=v, requests=REQUESTS)
    else:
        cfg = method_run_config(method, E, seed, config)
        trace = run(cfg, target, requests=REQUESTS)
        rep = trace.final
    if target.eval_count != E:
        raise RuntimeError(f"budget audit failed: {method} spent {target.eval_count} != {E}")
    i1 = np.atleast_1d(np.asarray(rep.i_hat["x^1"], dtype=float))
    i2 = np.atleast_1d(np.asarray(rep.i_hat["x^2"], dtype=float))
    out["z"] = rep.z_hat
    out["mean"] = i1.tolist()
    out["var"] = (i2 - i1 ** 2).tolist()
    out["eval_count"] = target.eval_count
    out["route"] = rep.route
    return out


def _cell_path(config: ExperimentConfig, method: str, E: int, seed_index: int) -> Path:
    return Path(config.out_dir) / config.experiment_id / "cells" / f"{method}_E{E}_s{seed_index}.json"


def _run_cell_job(args):
    config_dict, method, E, seed_index = args
    config = ExperimentConfig(**config_dict)
    return run_cell(config, method, E, seed_index)


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Every method x E x seed cell, scored against the oracle truth.

    Cell results are cached as JSON; re-running a finished experiment
    reproduces the identical CSV.  Within a cell all methods receive
    exactly the cell's evaluation budget E (audited).
    """
    truth = oracle_truth(config)
    jobs = []
    for method in config.methods:
        if method not in KNOWN_METHODS:
            raise ValueError(f"unknown method {method!r}")
        for E in config.e_values:
            for s in range(config.n_seeds):
                if not _cell_path(config, method, E, s).exists():
                    jobs.append((asdict(config), method, E, s))

    if jobs:
        nw = min(worker_count(), len(jobs))
        if nw > 1:
            import multiprocessing as mp
            with mp.get_context("fork").Pool(nw) as pool:
                results = pool.map(_run_cell_job, jobs, chunksize=1)
        else:
            results = [_run_cell_job(j) for j in jobs]
        for (cfgd, method, E, s), res in zip(jobs, results):
            path = _cell_path(config, method, E, s)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(res))
            os.replace(tmp, path)

    table = ResultTable()
    for method in config.methods:
        for E in config.e_values:
            cells = [json.loads(_cell_path(config, method, E, s).read_text())
                     for s in range(config.n_seeds)]
            zs = np.array([c["z"] for c in cells], dtype=float)
            means = np.array([c["mean"] for c in cells], dtype=float)
            var = np.array([c["var"] for c in cells], dtype=float)
            n = len(cells)
            if np.all(np.isfinite(zs)):
                table.add(method, E, "relmse_z", rel_mse(zs, truth.z), n)
                table.add(method, E, "relmse_z_median", rel_mse(zs, truth.z, "median"), n)
                table.add(method, E, "z_positive_frac", float(np.mean(zs > 0)), n)
            table.add(method, E, "relmse_mean", rel_mse(means, truth.mean), n)
            table.add(method, E, "relmse_mean_median", rel_mse(means, truth.mean, "median"), n)
            table.add(method, E, "relmse_var", rel_mse(var, truth.var), n)
            table.add(method, E, "relmse_var_median", rel_mse(var, truth.var, "median"), n)
            if config.target == "multimodal10" and np.all(np.isfinite(zs)):
                table.add(method, E, "mae_z", float(np.mean(np.abs(zs - truth.z))), n)
    out = Path(config.out_dir) / config.experiment_id
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "results.csv")
    return table


# ---------------------------------------------------------------------------
# Exoplanet evidence profiles
# ---------------------------------------------------------------------------

def zero_planet_log_evidence(data: RvDataset, sigma_e: float) -> float:
    """Closed-form log Z for the no-planet model, uniform prior on V0.

    Z(s) = int_{-20}^{20} (1/40) prod_t N(y_t | V0, s^2) dV0
         = (1/40) (2 pi s^2)^(-T/2) e^(-SS/(2 s^2)) sqrt(2 pi s^2 / T)
           [Phi((20-ybar) sqrt(T)/s) - Phi((-20-ybar) sqrt(T)/s)]
    with ybar the sample mean and SS the centered sum of squares.
    """
    from scipy.special import log_ndtr
    y = data.velocities
    T = data.count
    ybar = float(np.mean(y))
    ss = float(np.sum((y - ybar) ** 2))
    s2 = sigma_e ** 2
    a = np.sqrt(T) * (20.0 - ybar) / sigma_e
    b = np.sqrt(T) * (-20.0 - ybar) / sigma_e
    # log(Phi(a) - Phi(b)) via the complement pair for stability
    la, lb = log_ndtr(a), log_ndtr(b)
    log_phi_diff = la + np.log1p(-np.exp(min(lb - la, -1e-18)))
    return float(-np.log(40.0) - 0.5 * T * np.log(TWO_PI * s2) - ss / (2.0 * s2)
                 + 0.5 * np.log(TWO_PI * s2 / T) + log_phi_diff)


@dataclass
class EvidenceProfile:
    """log Z(sigma_e) curves per model order for one dataset."""

    sigma_grid: np.ndarray
    curves: dict          # model order S -> array of log Z over the grid
    method: str

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "model", "log_Z"])
            for s_model in sorted(self.curves):
                for sig, lz in zip(self.sigma_grid, self.curves[s_model]):
                    w.writerow([repr(float(sig)), s_model, repr(float(lz))])


def _profile_log_z(log_liks: np.ndarray, weights: np.ndarray, log_box_over_m: float) -> float:
    """log of (|X|/M) sum_i w_i exp(log_lik_i) with w_i probe counts."""
    finite = np.isfinite(log_liks) & (weights > 0)
    if not np.any(finite):
        return -np.inf
    m = np.max(log_liks[finite])
    s = float(np.sum(weights[finite] * np.exp(log_liks[finite] - m)))
    return log_box_over_m + m + np.log(s)


def _rv_node_log_priors(nodes: np.ndarray, data: RvDataset) -> np.ndarray:
    from .targets import RvParams, rv_log_prior
    return np.array([rv_log_prior(RvParams.from_vector(x), data) for x in nodes])


def exoplanet_evidence_profile(data: RvDataset, n_planets: int, sigma_grid: Sequence[float],
                               method: str = "nn-aq", seed: int = 0,
                               presample_budget: int = 10_000, n_iter: int = 500,
                               m_probes: int = 200_000, budget: int | None = None) -> np.ndarray:
    """log Z(sigma_e) for an S-planet model on one dataset.

    S = 0 is closed form.  For S >= 1 a single adaptive (or IS) pass
    stores each node's residual sum once; the curve re-weights those
    sums across the sigma grid with no further Kepler solves.

    The adaptive estimate integrates the NN surrogate by importance
    sampling from a defensive proposal (half uniform, half the
    node-centered Gaussian mixture): likelihood basins occupy so little
    volume that uniform probes alone cannot resolve the cells carrying
    nearly all of the surrogate's mass.
    """
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    if n_planets == 0:
        return np.array([zero_planet_log_evidence(data, s) for s in sigma_grid])

    target = rv_target(data, n_planets)
    n_obs = data.count
    support = target.support
    log_box = support.log_measure()

    def loglik(sses, s):
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(sses),
                            -0.5 * n_obs * np.log(TWO_PI * s ** 2) - sses / (2 * s ** 2),
                            -np.inf)

    if method == "is":
        E = budget if budget is not None else presample_budget + n_iter
        rng = np.random.default_rng(seed)
        xs = support.sample_uniform(E, rng)
        sses = np.empty(E)
        for s in range(0, E, 20_000):
            block = xs[s:s + 20_000]
            target.log_eval_many(block)
            a = target.last_aux
            sses[s:s + block.shape[0]] = [np.nan if v is None else v for v in a] \
                if isinstance(a, list) else np.asarray(a)
        logg = _rv_node_log_priors(xs, data)
        out = []
        for s in sigma_grid:
            lpost = loglik(sses, s) + logg
            out.append(_profile_log_z(lpost, np.ones(E), log_box - np.log(E)))
        return np.array(out)

    if method != "nn-aq":
        raise ValueError(f"unknown exoplanet method {method!r}")
    cfg = RunConfig(kernel="nn", init_mode="presample", presample_budget=presample_budget,
                    presample_keep_best=1, presample_keep_random=9,
                    n_iter=n_iter, seed=seed, m_probes=m_probes)
    trace = run(cfg, target, requests=())
    model = trace.model
    sses = np.array([a if a is not None else np.nan for a in trace.aux], dtype=float)
    assert sses.size == model.n_nodes      # aux rows follow node order
    logg = _rv_node_log_priors(model.nodes, data)

    # defensive IS sample: half uniform on the box, half node mixture
    from .quadrature import _node_mixture
    rng = np.random.default_rng(seed + 1)
    m_half = m_probes // 2
    mixture = _node_mixture(model, rng)
    zs = np.vstack([support.sample_uniform(m_half, rng),
                    mixture.sample(m_probes - m_half, rng)])
    inside = support.contains(zs)
    log_q = np.logaddexp(-log_box + np.log(0.5),
                         np.log(0.5) + mixture.log_pdf(zs))
    from .kernels import nearest_node
    assign, _ = nearest_node(model.nodes, zs, p=model.kernel.p)

    out = []
    for s in sigma_grid:
        lpost = loglik(sses, s) + logg                   # log pi_sigma at the nodes
        log_gamma = np.where(inside, lpost[assign] - log_q, -np.inf)
        finite = np.isfinite(log_gamma)
        if not np.any(finite):
            out.append(-np.inf)
            continue
        mx = np.max(log_gamma[finite])
        out.append(float(mx + np.log(np.sum(np.exp(log_gamma[finite] - mx)) / m_probes)))
    return np.array(out)


# ---------------------------------------------------------------------------
# Plot-data emission
# ---------------------------------------------------------------------------

FIGURE_PANELS = {
    "fig3a": ("relmse_z", ["nn-aq", "is-uniform", "mh-i", "mh-rw1", "mh-rw2", "mh-rw5"]),
    "fig3b": ("relmse_mean", ["nn-aq", "is-uniform", "mh-i", "mh-rw1", "mh-rw2", "mh-rw5"]),
    "fig3c": ("relmse_var", ["nn-aq", "is-uniform", "mh-i", "mh-rw1", "mh-rw2", "mh-rw5"]),
    "fig4a": ("relmse_z", ["nn-aq", "nn-u", "nn-aq-diversity-only", "nn-aq-tempered", "is-uniform"]),
    "fig4b": ("relmse_mean", ["nn-aq", "nn-u", "nn-aq-diversity-only", "nn-aq-tempered", "is-uniform"]),
    "fig4c": ("relmse_var", ["nn-aq", "nn-u", "nn-aq-diversity-only", "nn-aq-tempered", "is-uniform"]),
}


def emit_plot_data(table: ResultTable, figure_id: str, path) -> None:
    """One CSV per figure panel: x = E, one log10-metric column per method."""
    if figure_id not in FIGURE_PANELS:
        raise ValueError(f"unknown figure id {figure_id!r}")
    metric, methods = FIGURE_PANELS[figure_id]
    es = sorted({r["E"] for r in table.rows})
    headers = ["E"] + [m.replace("-", "_") for m in methods]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(headers)
        for E in es:
            row = [E]
            for m in methods:
                try:
                    row.append(repr(float(np.log10(table.get(m, E, metric)))))
                except KeyError:
                    row.append("")
            w.writerow(row)
