"""Unnormalized target densities evaluated in the log domain.

Provides the box-supported benchmark targets (banana, 10-d Gaussian
mixture), the exoplanet radial-velocity posterior, and a counting
wrapper for user-supplied black-box densities.  Every target is
evaluated through :class:`TargetDensity`, which increments an
evaluation counter once per call so that budgets can be audited.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi


class EvalBudgetExceededError(RuntimeError):
    """Raised when a capped target runs out of true evaluations."""


_SOBOL_CACHE: dict = {}


def _sobol_base(dim: int, n: int) -> np.ndarray:
    """First n points of the unscrambled Sobol sequence in [0,1)^dim, cached."""
    cached = _SOBOL_CACHE.get(dim)
    if cached is None or cached.shape[0] < n:
        from scipy.stats import qmc
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # non power-of-two draws warn
            cached = qmc.Sobol(d=dim, scramble=False).random(max(n, 1024))
        _SOBOL_CACHE[dim] = cached
    return cached[:n]


@dataclass(frozen=True)
class BoxSupport:
    """Axis-aligned hyperrectangle [lower_i, upper_i]^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, half_width: float, dim: int) -> "BoxSupport":
        return cls(np.full(dim, -half_width), np.full(dim, half_width))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def measure(self) -> float:
        """Volume |X| of the box."""
        return float(np.prod(self.widths))

    def log_measure(self) -> float:
        return float(np.sum(np.log(self.widths)))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, x: np.ndarray) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lower) & (x <= self.upper), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n uniform points in the box, shape (n, d)."""
        u = rng.random((n, self.dim))
        return self.lower + u * self.widths

    def sample_sobol(self, n: int, seed: int) -> np.ndarray:
        """n randomized-Sobol points in the box, shape (n, d).

        The base (unscrambled) Sobol block per dimension is cached; the
        seed applies a Cranley-Patterson rotation, so repeated calls are
        cheap and deterministic given the seed.
        """
        u = (_sobol_base(self.dim, n) + np.random.default_rng(seed).random(self.dim)) % 1.0
        return self.lower + u * self.widths


class TargetDensity:
    """Black-box evaluator of log pi(x) over a box support.

    The counter increments by exactly one per :meth:`log_eval` call and
    is protected by a lock so read-only sharing across threads is safe.
    When the wrapped function exposes auxiliary per-evaluation data
    (e.g. residual sums for the radial-velocity likelihood) it is made
    available in :attr:`last_aux` after each evaluation.
    """

    def __init__(self, dim: int, support: BoxSupport, log_fn: Callable[[np.ndarray], float],
                 name: str = "target", max_evals: int | None = None):
        if support.dim != dim:
            raise ValueError(f"support dimension {support.dim} != target dimension {dim}")
        self.dim = int(dim)
        self.support = support
        self._log_fn = log_fn
        self.name = name
        self.max_evals = max_evals
        self.last_aux = None
        self._count = 0
        self._lock = threading.Lock()

    @property
    def eval_count(self) -> int:
        return self._count

    def _tick(self):
        with self._lock:
            if self.max_evals is not None and self._count >= self.max_evals:
                raise EvalBudgetExceededError(
                    f"target '{self.name}' exhausted its budget of {self.max_evals} evaluations")
            self._count += 1

    def log_eval(self, x: np.ndarray) -> float:
        """Counted evaluation of log pi(x); -inf outside the support."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected point of shape ({self.dim},), got {x.shape}")
        self._tick()
        if not self.support.contains(x):
            self.last_aux = None
            return -np.inf
        out = self._log_fn(x)
        self.last_aux = getattr(self._log_fn, "last_aux", None)
        return float(out)

    def log_eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Counted evaluation of a batch; increments the counter once per row.

        Uses the wrapped function's vectorized batch path when it has
        one (``eval_batch``); ``last_aux`` then holds the per-row
        auxiliary array.
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        batch = getattr(self._log_fn, "eval_batch", None)
        if batch is None:
            out = np.empty(xs.shape[0])
            aux = []
            for i, x in enumerate(xs):
                out[i] = self.log_eval(x)
                aux.append(self.last_aux)
            self.last_aux = aux if any(a is not None for a in aux) else None
            return out
        for _ in range(xs.shape[0]):
            self._tick()
        out = np.asarray(batch(xs), dtype=float)
        inside = self.support.contains(xs)
        out = np.where(inside, out, -np.inf)
        aux = getattr(self._log_fn, "last_aux", None)
        if aux is not None:
            self.last_aux = np.where(inside, np.asarray(aux, dtype=float), np.nan)
        return out


# ---------------------------------------------------------------------------
# Benchmark targets
# ---------------------------------------------------------------------------

def banana_log_density(x: np.ndarray, dim: int = 2, B: float = 4.0, eta0: float = 4.0,
                       eta: float = 3.5, eta1: float | None = None) -> np.ndarray | float:
    """Log of the banana-shaped density on [-10, 10]^dim.

        log pi(x) = -(eta1 - B*x1 - x2^2)^2 / (2*eta0^2) - sum_i x_i^2 / (2*eta^2)

    ``eta1`` defaults to ``eta``.  Accepts a single point (dim,) or a
    batch (n, dim); returns -inf outside the box.
    """
    if dim < 2:
        raise ValueError("banana target requires dim >= 2")
    if eta1 is None:
        eta1 = eta
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"expected last axis of size {dim}, got shape {x.shape}")
    x1 = x[..., 0]
    x2 = x[..., 1]
    logp = -((eta1 - B * x1 - x2 ** 2) ** 2) / (2.0 * eta0 ** 2) \
        - np.sum(x ** 2, axis=-1) / (2.0 * eta ** 2)
    outside = np.any(np.abs(x) > 10.0, axis=-1)
    return np.where(outside, -np.inf, logp) if logp.ndim else (-np.inf if outside else float(logp))


# Parameters that reproduce the published banana ground truth
# (Z = 7.9979, var diag = [1.3813, 8.9081]); see banana_target().
BANANA_EXPERIMENT_PARAMS = {"B": 10.0, "eta0": 4.0, "eta": 3.5, "eta1": 4.0}

_MM_MEANS = np.zeros((3, 10))
_MM_MEANS[0, 0] = 5.0
_MM_MEANS[1, 0] = -7.0
_MM_MEANS[2, :] = 1.0
_MM_VAR = 16.0  # shared covariance 4^2 I_10


def multimodal_log_density(x: np.ndarray) -> np.ndarray | float:
    """Log density of the equally weighted 3-Gaussian mixture in d=10.

    Means [5,0,...,0], [-7,0,...,0], [1,...,1]; covariances 4^2 I; box
    support [-15, 15]^10.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 10:
        raise ValueError(f"multimodal target requires dim=10, got shape {x.shape}")
    diffs = x[..., None, :] - _MM_MEANS          # (..., 3, 10)
    comp = -0.5 * np.sum(diffs ** 2, axis=-1) / _MM_VAR \
        - 5.0 * np.log(TWO_PI * _MM_VAR)         # (..., 3)
    m = np.max(comp, axis=-1)
    logp = m + np.log(np.sum(np.exp(comp - m[..., None]), axis=-1)) + np.log(1.0 / 3.0)
    outside = np.any(np.abs(x) > 15.0, axis=-1)
    return np.where(outside, -np.inf, logp) if logp.ndim else (-np.inf if outside else float(logp))


def banana_target(dim: int = 2, experiment: bool = True, max_evals: int | None = None) -> TargetDensity:
    """Banana TargetDensity on [-10,10]^dim.

    With ``experiment=True`` (default) the parameters are the ones the
    published ground-truth moments were computed from (B=10, eta1=4);
    ``experiment=False`` uses the textbook defaults (B=4, eta1=eta=3.5).
    """
    params = BANANA_EXPERIMENT_PARAMS if experiment else {}
    fn = lambda x: banana_log_density(x, dim=dim, **params)
    return TargetDensity(dim, BoxSupport.cube(10.0, dim), fn,
                         name=f"banana{dim}d", max_evals=max_evals)


def multimodal_target(max_evals: int | None = None) -> TargetDensity:
    return TargetDensity(10, BoxSupport.cube(15.0, 10), multimodal_log_density,
                         name="multimodal10d", max_evals=max_evals)


# ---------------------------------------------------------------------------
# Exoplanet radial-velocity model
# ---------------------------------------------------------------------------

@dataclass
class RvDataset:
    """Radial-velocity observations (times strictly increasing)."""

    times: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.velocities.shape:
            raise ValueError("times and velocities must be 1-D arrays of equal length")
        if self.times.size < 1:
            raise ValueError("dataset must contain at least one observation")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def count(self) -> int:
        return self.times.size

    def velocity_span(self) -> float:
        return float(self.velocities.max() - self.velocities.min())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "y"])
            for t, y in zip(self.times, self.velocities):
                writer.writerow([repr(float(t)), repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "RvDataset":
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "y"]:
                raise ValueError(f"expected header 't,y', got {header!r}")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        t, y = zip(*rows)
        return cls(np.array(t), np.array(y))


@dataclass
class RvParams:
    """Radial-velocity model parameters: mean velocity plus per-planet blocks.

    ``planets`` has one row [K, omega, e, P, tau] per planet; the flat
    vector layout is [V0, K1, omega1, e1, P1, tau1, ...].
    """

    v0: float
    planets: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    def __post_init__(self):
        self.planets = np.asarray(self.planets, dtype=float).reshape(-1, 5)

    @property
    def n_planets(self) -> int:
        return self.planets.shape[0]

    @property
    def dim(self) -> int:
        return 1 + 5 * self.n_planets

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.v0], self.planets.ravel()])

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "RvParams":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or (x.size - 1) % 5 != 0:
            raise ValueError(f"parameter vector must have length 1+5S, got {x.size}")
        return cls(float(x[0]), x[1:].reshape(-1, 5))


def _kepler_newton(Mr: np.ndarray, e: np.ndarray, tol: float, max_newton: int) -> np.ndarray:
    """Vectorized Newton + bisection for reduced mean anomalies in [0, 2pi)."""
    E = np.where(e > 0.8, np.pi, Mr)
    converged = np.zeros(Mr.shape, dtype=bool)
    for _ in range(max_newton):
        f = E - e * np.sin(E) - Mr
        converged = np.abs(f) <= tol
        if converged.all():
            break
        step = f / (1.0 - e * np.cos(E))
        E = np.where(converged, E, E - step)
    if not converged.all():
        # g(E) = E - e sin E - M is strictly increasing; root in [0, 2pi]
        bad = ~converged
        lo = np.zeros(bad.sum())
        hi = np.full(bad.sum(), TWO_PI)
        m_bad = Mr[bad]
        e_bad = e[bad] if np.ndim(e) else np.full(bad.sum(), float(e))
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            gm = mid - e_bad * np.sin(mid) - m_bad
            hi = np.where(gm >= 0.0, mid, hi)
            lo = np.where(gm >= 0.0, lo, mid)
        E[bad] = 0.5 * (lo + hi)
    return E


def solve_kepler(M_anom, e: float, tol: float = 1e-12, max_newton: int = 50):
    """Solve Kepler's equation E - e sin E = M for the eccentric anomaly.

    Newton-Raphson from E0 = M (E0 = pi when e > 0.8), with a bisection
    fallback after ``max_newton`` iterations.  The residual satisfies
    |E - e sin E - M| <= tol.  M may be a scalar or array; it is reduced
    mod 2 pi internally and the reduction is added back on return.
    """
    if not (0.0 <= e < 1.0):
        raise ValueError(f"eccentricity must lie in [0, 1), got {e}")
    M = np.asarray(M_anom, dtype=float)
    scalar = M.ndim == 0
    M = np.atleast_1d(M)
    k = np.floor(M / TWO_PI)
    Mr = M - k * TWO_PI
    E = Mr.copy() if e == 0.0 else _kepler_newton(Mr, np.broadcast_to(e, Mr.shape), tol, max_newton)
    E = E + k * TWO_PI
    return float(E[0]) if scalar else E


def rv_predict(params: RvParams, t) -> np.ndarray | float:
    """Predicted radial velocity V0 + sum_i K_i [cos(u_i + w_i) + e_i cos w_i].

    The true anomaly u follows from the mean anomaly via Kepler's
    equation and tan(u/2) = sqrt((1+e)/(1-e)) tan(E/2), evaluated with a
    quadrant-safe two-argument arctangent.
    """
    t = np.asarray(t, dtype=float)
    v = np.full(t.shape, params.v0) if t.ndim else float(params.v0)
    for K, omega, e, P, tau in params.planets:
        if P <= 0:
            raise ValueError(f"orbital period must be positive, got {P}")
        M = TWO_PI * (t - tau) / P
        E = solve_kepler(M, float(e))
        # tan(u/2) = sqrt((1+e)/(1-e)) tan(E/2)  via atan2 on half-angle sines/cosines
        u = 2.0 * np.arctan2(np.sqrt(1.0 + e) * np.sin(np.asarray(E) / 2.0),
                             np.sqrt(1.0 - e) * np.cos(np.asarray(E) / 2.0))
        v = v + K * (np.cos(u + omega) + e * np.cos(omega))
    return v


def rv_residual_ss(params: RvParams, data: RvDataset) -> float:
    """Sum of squared residuals of the model against the data.

    A single pass solves Kepler for every observation; the returned
    value can be re-weighted across noise levels without re-solving.
    """
    r = data.velocities - rv_predict(params, data.times)
    return float(np.dot(r, r))


def rv_predict_rows(xs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Predicted velocities for a batch of parameter vectors, shape (n, T).

    Rows must already satisfy P_i > 0 and e_i in [0, 1); used by the
    vectorized posterior evaluation after prior screening.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    t = np.asarray(t, dtype=float)
    n_planets = (xs.shape[1] - 1) // 5
    v = np.tile(xs[:, :1], (1, t.size))
    for i in range(n_planets):
        K, omega, e, P, tau = (xs[:, 1 + 5 * i + j][:, None] for j in range(5))
        M = TWO_PI * (t[None, :] - tau) / P
        k = np.floor(M / TWO_PI)
        E = _kepler_newton(M - k * TWO_PI, np.broadcast_to(e, M.shape), 1e-12, 50)
        u = 2.0 * np.arctan2(np.sqrt(1.0 + e) * np.sin(E / 2.0),
                             np.sqrt(1.0 - e) * np.cos(E / 2.0))
        v = v + K * (np.cos(u + omega) + e * np.cos(omega))
    return v


def rv_log_likelihood_from_ss(sse: float, sigma_e: float, n_obs: int) -> float:
    if sigma_e <= 0:
        raise ValueError(f"sigma_e must be positive, got {sigma_e}")
    return -0.5 * n_obs * np.log(TWO_PI * sigma_e ** 2) - sse / (2.0 * sigma_e ** 2)


def rv_log_likelihood(params: RvParams, sigma_e: float, data: RvDataset) -> float:
    """Gaussian log likelihood of the dataset under the Keplerian model."""
    return rv_log_likelihood_from_ss(rv_residual_ss(params, data), sigma_e, data.count)


def rv_prior_indicator(params: RvParams, data: RvDataset) -> bool:
    """Uniform-prior indicator: True iff every parameter is in range.

    V0 in [-20,20], K_i in [0, max y - min y], e_i in [0,1), P_i in
    (0,365], omega_i in [0,2pi], tau_i in [0,P_i].  Eccentricity is
    half-open to keep Kepler solvable; the period excludes 0 because the
    mean anomaly is undefined there.
    """
    if not (-20.0 <= params.v0 <= 20.0):
        return False
    k_max = data.velocity_span()
    for K, omega, e, P, tau in params.planets:
        if not (0.0 <= K <= k_max):
            return False
        if not (0.0 <= e < 1.0):
            return False
        if not (0.0 < P <= 365.0):
            return False
        if not (0.0 <= omega <= TWO_PI):
            return False
        if not (0.0 <= tau <= P):
            return False
    return True


def rv_support(n_planets: int, data: RvDataset) -> BoxSupport:
    """Sampling box for S planets: the prior intervals, tau relaxed to [0,365]."""
    lower = [-20.0]
    upper = [20.0]
    span = data.velocity_span()
    for _ in range(n_planets):
        lower += [0.0, 0.0, 0.0, 0.0, 0.0]
        upper += [span, TWO_PI, 1.0, 365.0, 365.0]
    return BoxSupport(np.array(lower), np.array(upper))


def rv_log_prior(params: RvParams, data: RvDataset) -> float:
    """Normalized uniform prior log-density; -inf outside the support.

    Each parameter carries 1/(interval length); the periastron time is
    conditionally uniform on [0, P_i], contributing 1/P_i.  Normalization
    matters: evidences of models with different planet counts are
    compared directly.
    """
    if not rv_prior_indicator(params, data):
        return -np.inf
    out = -np.log(40.0)
    span = data.velocity_span()
    for _, _, _, P, _ in params.planets:
        out -= np.log(span) + np.log(TWO_PI) + np.log(365.0) + np.log(P)
    return float(out)


class _RvLogPosterior:
    """log(prior * likelihood) with the residual sum cached per call."""

    def __init__(self, data: RvDataset, n_planets: int, sigma_e: float):
        self.data = data
        self.n_planets = n_planets
        self.sigma_e = sigma_e
        self.last_aux = None

    def __call__(self, x: np.ndarray) -> float:
        params = RvParams.from_vector(x)
        if params.n_planets != self.n_planets:
            raise ValueError("parameter vector length does not match planet count")
        log_g = rv_log_prior(params, self.data)
        if log_g == -np.inf:
            self.last_aux = None
            return -np.inf
        sse = rv_residual_ss(params, self.data)
        self.last_aux = sse
        return log_g + rv_log_likelihood_from_ss(sse, self.sigma_e, self.data.count)

    def eval_batch(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized log pi over rows; last_aux becomes the SSE array."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = xs.shape[0]
        span = self.data.velocity_span()
        ok = (-20.0 <= xs[:, 0]) & (xs[:, 0] <= 20.0)
        log_g = np.full(n, -np.log(40.0))
        for i in range(self.n_planets):
            K, omega, e, P, tau = (xs[:, 1 + 5 * i + j] for j in range(5))
            ok &= ((0.0 <= K) & (K <= span) & (0.0 <= e) & (e < 1.0)
                   & (0.0 < P) & (P <= 365.0) & (0.0 <= omega) & (omega <= TWO_PI)
                   & (0.0 <= tau) & (tau <= P))
            with np.errstate(invalid="ignore", divide="ignore"):
                log_g -= np.log(span) + np.log(TWO_PI) + np.log(365.0) + np.log(P)
        out = np.full(n, -np.inf)
        sses = np.full(n, np.nan)
        if np.any(ok):
            safe = xs[ok]
            resid = self.data.velocities[None, :] - rv_predict_rows(safe, self.data.times)
            sse = np.sum(resid * resid, axis=1)
            sses[ok] = sse
            out[ok] = log_g[ok] + (-0.5 * self.data.count * np.log(TWO_PI * self.sigma_e ** 2)
                                   - sse / (2.0 * self.sigma_e ** 2))
        self.last_aux = sses
        return out


def rv_target(data: RvDataset, n_planets: int, sigma_e: float = np.sqrt(2.0),
              max_evals: int | None = None) -> TargetDensity:
    """Unnormalized RV posterior pi(x) = l(y|x, sigma_e) g(x) as a TargetDensity.

    After every counted evaluation, ``last_aux`` holds the residual sum
    of squares so the evidence can be re-profiled over sigma_e with no
    further Kepler solves.
    """
    fn = _RvLogPosterior(data, n_planets, sigma_e)
    return TargetDensity(1 + 5 * n_planets, rv_support(n_planets, data), fn,
                         name=f"rv_{n_planets}planet", max_evals=max_evals)


# Synthetic-data parameter sets used in the exoplanet experiments.
RV_PLANET_1 = (25.0, 0.61, 0.1, 15.0, 3.0)     # K, omega, e, P, tau
RV_PLANET_2 = (5.0, 0.17, 0.3, 115.0, 25.0)


def make_rv_dataset(n_planets: int, n_obs: int = 60, t_span: float = 180.0,
                    sigma2: float = 2.0, v0: float = 2.0, seed: int = 0) -> RvDataset:
    """Synthetic RV dataset: n_obs uniformly spaced times over [0, t_span]."""
    if n_planets not in (0, 1, 2):
        raise ValueError("synthetic datasets are defined for 0, 1 or 2 planets")
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, t_span, n_obs)
    blocks = [RV_PLANET_1, RV_PLANET_2][:n_planets]
    params = RvParams(v0, np.array(blocks).reshape(-1, 5))
    clean = rv_predict(params, times)
    noisy = clean + rng.normal(0.0, np.sqrt(sigma2), size=n_obs)
    return RvDataset(times, noisy)
