"""Bandwidth selection for Gaussian kernels.

Two procedures over a log-spaced grid: the first-local-maximum-of-Z_hat
heuristic, which always lands on a positive normalizing-constant
estimate, and the standard GP log-marginal-likelihood fit kept for
comparison (it tends to pick bandwidths too large for density
emulation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .interpolant import ConditioningError, default_jitter, fit, separation_distance
from .kernels import GaussianKernelSpec
from .targets import BoxSupport

logger = logging.getLogger(__name__)


@dataclass
class BandwidthScan:
    """Grid scan record: criterion values per h plus the selected point."""

    grid: np.ndarray
    values: np.ndarray          # Z_hat (shifted scale) or log-ML per grid point
    n_negative_beta: np.ndarray
    selected: float
    criterion: str
    warning: str | None = None
    skipped: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["h", self.criterion, "n_negative_beta"])
            for h, v, nb in zip(self.grid, self.values, self.n_negative_beta):
                w.writerow([repr(float(h)), repr(float(v)), int(nb)])


def make_bandwidth_grid(nodes: np.ndarray, support: BoxSupport, n: int = 40) -> np.ndarray:
    """Log-spaced grid over [s/10, diam(X)], s the node separation distance."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if n < 16:
        raise ValueError("bandwidth grid needs at least 16 points")
    lo = separation_distance(nodes) / 10.0 if nodes.shape[0] >= 2 else support.diameter() / 1000.0
    hi = support.diameter()
    if lo <= 0 or lo >= hi:
        lo = hi / 1000.0
    return np.geomspace(lo, hi, n)


# A grid point is trustworthy while the coefficients keep limited
# cancellation, sum|beta| <= KAPPA_MAX |sum beta|; past that the solve is
# in the regime where |beta_i| blows up and Z_hat(h) shows spurious maxima.
KAPPA_MAX = 10.0


def _scan(nodes, log_values, grid, jitter, criterion):
    zs = np.full(len(grid), np.nan)
    mll = np.full(len(grid), np.nan)
    neg = np.zeros(len(grid), dtype=int)
    valid = np.zeros(len(grid), dtype=bool)
    skipped = []
    dim = np.atleast_2d(nodes).shape[1]
    for i, h in enumerate(grid):
        spec = GaussianKernelSpec(float(h), dim)
        try:
            model = fit(nodes, log_values, spec, jitter=jitter)
        except ConditioningError:
            skipped.append(float(h))
            continue
        zs[i] = float(np.sum(model.beta))
        neg[i] = int(np.sum(model.beta < 0))
        kappa = float(np.sum(np.abs(model.beta))) / max(abs(zs[i]), 1e-300)
        valid[i] = kappa <= KAPPA_MAX
        if criterion == "mll":
            # log p(d|h) = -1/2 d^T K~^{-1} d - 1/2 log|K~|  (additive constant dropped)
            quad = float(model.values @ model.k_inv @ model.values)
            sign, logdet = np.linalg.slogdet(np.linalg.inv(model.k_inv))
            mll[i] = -0.5 * quad - 0.5 * logdet
    if skipped:
        logger.warning("bandwidth scan skipped %d ill-conditioned grid points", len(skipped))
    return zs, mll, neg, valid, skipped


def _first_local_max(grid, zs):
    """Leftmost interior strict local maximum with a positive value."""
    n = len(zs)
    i = 1
    while i < n - 1:
        if not (np.isfinite(zs[i - 1]) and np.isfinite(zs[i])):
            i += 1
            continue
        if zs[i] > zs[i - 1]:
            start = i
            j = i
            while j + 1 < n and np.isfinite(zs[j + 1]) and zs[j + 1] == zs[j]:
                j += 1                       # plateau resolves to its left edge
            if j + 1 < n and np.isfinite(zs[j + 1]) and zs[j + 1] < zs[j]:
                if zs[start] > 0:
                    return start
                i = j + 1
                continue
            i = j + 1
        else:
            i += 1
    return None


def tune_bandwidth_zhat(nodes: np.ndarray, log_values: np.ndarray, grid: np.ndarray,
                        jitter: float | None = None) -> BandwidthScan:
    """Pick h at the first local maximum of Z_hat(h) = sum(beta(h)).

    Starting near zero the estimate grows to a maximum, after which
    kernel overlap produces negative coefficients and Z_hat decays.
    Only the well-conditioned prefix of the grid is searched (once the
    solve is jitter-dominated, Z_hat(h) develops spurious maxima).
    Falls back to the prefix argmax (with a warning) when no interior
    local maximum exists.  The selected point always has Z_hat > 0.
    """
    grid = np.asarray(grid, dtype=float)
    zs, _, neg, valid, skipped = _scan(nodes, log_values, grid, jitter, "zhat")
    invalid = np.flatnonzero(~valid & np.isfinite(zs))
    cut = int(invalid[0]) if invalid.size else len(grid)
    zs_prefix = zs.copy()
    zs_prefix[cut:] = np.nan
    idx = _first_local_max(grid, zs_prefix)
    warning = None
    if idx is None:
        finite = np.isfinite(zs_prefix)
        if not np.any(finite):
            finite = np.isfinite(zs)  # everything jitter-dominated: use what exists
        if not np.any(finite):
            raise ConditioningError("bandwidth scan failed at every grid point")
        pool_vals = np.where(finite, zs, -np.inf)
        positive = finite & (zs > 0)
        if np.any(positive):
            pool_vals = np.where(positive, zs, -np.inf)
        idx = int(np.argmax(pool_vals))
        warning = "no interior local maximum of Z_hat on the grid; using its argmax"
        logger.warning(warning)
    return BandwidthScan(grid=grid, values=zs, n_negative_beta=neg,
                         selected=float(grid[idx]), criterion="z_hat",
                         warning=warning, skipped=skipped)


def tune_bandwidth_mll(nodes: np.ndarray, log_values: np.ndarray, grid: np.ndarray,
                       jitter: float | None = None) -> BandwidthScan:
    """Pick h maximizing the GP log marginal likelihood over the grid."""
    grid = np.asarray(grid, dtype=float)
    zs, mll, neg, valid, skipped = _scan(nodes, log_values, grid, jitter, "mll")
    finite = np.isfinite(mll)
    if not np.any(finite):
        raise ConditioningError("marginal-likelihood scan failed at every grid point")
    idx = int(np.flatnonzero(finite)[np.argmax(mll[finite])])
    return BandwidthScan(grid=grid, values=mll, n_negative_beta=neg,
                         selected=float(grid[idx]), criterion="log_ml", skipped=skipped)
