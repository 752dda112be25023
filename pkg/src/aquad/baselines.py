"""Fair-budget reference estimators: uniform IS and Metropolis-Hastings.

Each baseline spends exactly E true-target evaluations, matching the
adaptive schemes' budget.  IS estimates Z and self-normalized moments;
the MH chains estimate moments only (Z is not straightforward via
MCMC).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quadrature import EstimateReport, MomentRequest
from .targets import TargetDensity


@dataclass(frozen=True)
class BaselineConfig:
    kind: str                  # 'is-uniform' | 'mh-independent' | 'mh-random-walk'
    budget: int
    seed: int = 0
    rw_scale: float = 1.0      # proposal std v for the random walk

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.kind == "mh-random-walk" and self.rw_scale <= 0:
            raise ValueError("random-walk proposal scale must be positive")


def is_uniform(target: TargetDensity, E: int, rng: np.random.Generator,
               requests: Sequence[MomentRequest] = ()) -> EstimateReport:
    """Importance sampling with the uniform proposal q = 1/|X| on the box.

    Z_hat = (|X|/E) sum_e pi(z_e), computed in the log domain;
    expectations are self-normalized.
    """
    zs = target.support.sample_uniform(E, rng)
    logs = np.array([target.log_eval(z) for z in zs])
    log_box = target.support.log_measure()
    finite = np.isfinite(logs)
    report = EstimateReport(route="baseline-is-uniform", z_hat=0.0, log_z_hat=float("nan"),
                            m_used=E, eval_count=E)
    if not np.any(finite):
        report.warnings.append("target vanished at every sample")
        for req in requests:
            report.i_hat[req.name] = np.nan
        return report
    m = np.max(logs[finite])
    w = np.where(finite, np.exp(logs - m), 0.0)
    report.log_z_hat = float(log_box + m + np.log(np.sum(w) / E))
    report.z_hat = float(np.exp(report.log_z_hat))
    wbar = w / np.sum(w)
    for req in requests:
        fz = req.evaluate(zs)
        val = wbar @ fz if fz.ndim > 1 else np.sum(wbar * fz)
        report.i_hat[req.name] = np.asarray(val)
    return report


def mh_chain(target: TargetDensity, kind: str, E: int, rng: np.random.Generator,
             rw_scale: float = 1.0, requests: Sequence[MomentRequest] = ()
             ) -> tuple[np.ndarray, EstimateReport]:
    """Metropolis chain with exactly E target evaluations (initial point included).

    'independent' proposes uniformly on the box; 'random-walk' proposes
    N(current, v^2 I).  Both proposals are symmetric, so the acceptance
    probability is min(1, pi(x')/pi(x)).  Moments are chain averages; no
    burn-in is discarded (budgets here are small by design).
    """
    if kind not in ("independent", "random-walk"):
        raise ValueError(f"unknown chain kind {kind!r}")
    d = target.dim
    x = target.support.sample_uniform(1, rng)[0]
    lp = target.log_eval(x)
    samples = np.empty((E, d))
    samples[0] = x
    accepted = 0
    for e in range(1, E):
        if kind == "independent":
            prop = target.support.sample_uniform(1, rng)[0]
        else:
            prop = x + rw_scale * rng.standard_normal(d)
        lp_new = target.log_eval(prop)
        if np.log(rng.random()) < lp_new - lp:
            x, lp = prop, lp_new
            accepted += 1
        samples[e] = x
    route = "baseline-mh-independent" if kind == "independent" else f"baseline-mh-rw-{rw_scale:g}"
    report = EstimateReport(route=route, z_hat=float("nan"), log_z_hat=float("nan"),
                            m_used=E, eval_count=E,
                            diagnostics={"acceptance_rate": accepted / max(E - 1, 1)})
    for req in requests:
        fz = req.evaluate(samples)
        report.i_hat[req.name] = np.asarray(np.mean(fz, axis=0))
    return samples, report


def run_baseline(config: BaselineConfig, target: TargetDensity,
                 requests: Sequence[MomentRequest] = ()) -> EstimateReport:
    rng = np.random.default_rng(config.seed)
    if config.kind == "is-uniform":
        return is_uniform(target, config.budget, rng, requests)
    if config.kind == "mh-independent":
        return mh_chain(target, "independent", config.budget, rng, requests=requests)[1]
    if config.kind == "mh-random-walk":
        return mh_chain(target, "random-walk", config.budget, rng,
                        rw_scale=config.rw_scale, requests=requests)[1]
    raise ValueError(f"unknown baseline {config.kind!r}")
