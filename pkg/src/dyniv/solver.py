"""Multi-start derivative-free minimization of the moment objective.

The objective is piecewise constant in theta at finite n (every moment term
is built from indicator thresholds), so gradient-based optimizers are
inapplicable; each start runs Nelder-Mead on a transformed scale where the
positivity-constrained coordinates are log-transformed, inside the compact
box [-10, 10]^4, restarting once from the incumbent when the iteration
budget rather than the tolerances stopped it.

Starting values are log-normal multiplicative perturbations (additive
normal on the transformed scale) around a censored maximum-likelihood fit
of a single no-treatment distribution to (Y, delta).

When an upper censoring-support bound c0 is known, parameter vectors whose
quantile maps reach c0 on the grid are discouraged by an additive penalty
of 1e6 per violating observation; the reported result carries an explicit
feasibility flag for the same condition.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import _pool
from .censoring import fit_censoring_km
from .dataset import Dataset
from .families import ModelFamily, ModelParams, phi0, phi1_or_nan
from .moments import UGrid, WeightedSample, objective, prepare
from .rng import rnorm, substream

__all__ = [
    "SolverConfig",
    "EstimationResult",
    "build_ugrid",
    "naive_fit",
    "feasibility_check",
    "estimate",
    "to_transformed",
    "from_transformed",
]

BOX_HALF_WIDTH = 10.0
PENALTY_PER_VIOLATION = 1.0e6
STREAM_START = 1


@dataclass(frozen=True)
class SolverConfig:
    """Estimation knobs; the JSON form is part of the file-format contract."""

    n_starts: int = 100
    grid_m: int = 100
    q_low: float = 0.025
    q_high: float = 0.975
    max_iters: int = 600
    tol_simplex: float = 1e-8
    tol_objective: float = 1e-12
    start_scale: float = 0.5
    seed: int = 0
    c0: float | None = None

    def __post_init__(self):
        if self.n_starts < 1 or self.grid_m < 1:
            raise ValueError("n_starts and grid_m must be positive")
        if not (0.0 < self.q_low <= self.q_high < 1.0):
            raise ValueError("require 0 < q_low <= q_high < 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def to_json(self) -> str:
        d = asdict(self)
        if d["c0"] is not None and np.isinf(d["c0"]):
            d["c0"] = None
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SolverConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("solver config JSON must be an object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def c0_value(self) -> float:
        return np.inf if self.c0 is None else float(self.c0)


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: ModelParams
    objective_value: float
    n_starts_converged: int
    per_start_minima: list = field(repr=False)
    feasibility_flag: int = 1


def build_ugrid(m: int, q_low: float, q_high: float, weight_fn=None) -> UGrid:
    """Equally spaced u-grid between unit-exponential quantiles of q_low, q_high."""
    if m < 1:
        raise ValueError("m must be positive")
    if not (0.0 < q_low <= q_high < 1.0):
        raise ValueError("require 0 < q_low <= q_high < 1")
    if m > 1 and q_low == q_high:
        raise ValueError("q_low = q_high only allowed for a single-point grid")
    u1 = -np.log1p(-q_low)
    um = -np.log1p(-q_high)
    points = np.linspace(u1, um, m)
    weights = np.exp(-points) if weight_fn is None else np.asarray(
        weight_fn(points), dtype=float)
    return UGrid(points, weights)


def grid_for(config: SolverConfig) -> UGrid:
    return build_ugrid(config.grid_m, config.q_low, config.q_high)


def to_transformed(family: ModelFamily, theta: ModelParams) -> np.ndarray:
    """Map natural-scale parameters to the unconstrained optimizer scale."""
    a = theta.as_array()
    if family is ModelFamily.WEIBULL:
        return np.log(a)
    return np.array([a[0], a[1], np.log(a[2]), np.log(a[3])])


def from_transformed(family: ModelFamily, x) -> ModelParams:
    x = np.asarray(x, dtype=float)
    if family is ModelFamily.WEIBULL:
        return ModelParams.from_array(np.exp(x))
    return ModelParams.from_array([x[0], x[1], np.exp(x[2]), np.exp(x[3])])


def _weibull_mle(y: np.ndarray, events: np.ndarray) -> tuple[float, float]:
    """Censored MLE of (scale, shape) for cumulative hazard scale*t^shape.

    The scale has the closed profile solution sum(delta)/sum(y^shape); the
    shape maximizes the profiled log likelihood over a log-scale bracket.
    """
    n_ev = int(events.sum())
    logy_ev = np.log(y[events])
    sum_logy_ev = float(np.sum(logy_ev))

    def neg_profile(log_k: float) -> float:
        k = np.exp(log_k)
        s = float(np.sum(y ** k))
        scale = n_ev / s
        return -(n_ev * (np.log(scale) + log_k - 1.0) + (k - 1.0) * sum_logy_ev)

    res = minimize_scalar(neg_profile, bounds=(-7.0, 7.0), method="bounded",
                          options={"xatol": 1e-10})
    k = float(np.exp(res.x))
    scale = n_ev / float(np.sum(y ** k))
    return scale, k


def _lognormal_mle(y: np.ndarray, events: np.ndarray) -> tuple[float, float]:
    """Censored MLE of (log-mean, log-sd); closed form when uncensored."""
    logy = np.log(y)
    mu0 = float(np.mean(logy[events]))
    sd0 = float(np.std(logy[events]))
    if events.all():
        return mu0, sd0
    from scipy.special import log_ndtr
    logy_ev = logy[events]
    logy_cs = logy[~events]

    def negll(x):
        mu, log_sd = x
        sd = np.exp(log_sd)
        xe = (logy_ev - mu) / sd
        ll = np.sum(-0.5 * xe * xe - log_sd) + np.sum(log_ndtr(-(logy_cs - mu) / sd))
        return -ll

    res = minimize(negll, np.array([mu0, np.log(max(sd0, 1e-6))]),
                   method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
    mu, log_sd = res.x
    return float(mu), float(np.exp(log_sd))


def naive_fit(dataset: Dataset, family: ModelFamily) -> ModelParams:
    """Fit one no-treatment distribution to (Y, delta); duplicate it pre/post.

    This ignores treatment entirely and serves only to center the random
    starting values of the minimum-distance solver.
    """
    events = dataset.delta == 1
    if int(events.sum()) < 2:
        raise ValueError("naive fit needs at least 2 uncensored observations")
    if np.any(dataset.y <= 0.0):
        raise ValueError("naive fit requires strictly positive follow-up times")
    if family is ModelFamily.WEIBULL:
        scale, shape = _weibull_mle(dataset.y, events)
        return ModelParams(scale, scale, shape, shape)
    mu, sd = _lognormal_mle(dataset.y, events)
    return ModelParams(mu, mu, sd, sd)


def feasibility_check(family: ModelFamily, theta: ModelParams, grid: UGrid,
                      dataset: Dataset, c0: float | None) -> int:
    """1 iff phi0(u_m) and every treated phi1(Ztilde_i, u_m) stay below c0."""
    if c0 is None or np.isinf(c0):
        return 1
    u_m = float(grid.points[-1])
    if not (phi0(family, theta, u_m) < c0):
        return 0
    z_treated = dataset.ztilde[dataset.dtilde == 1]
    if z_treated.size:
        vals = phi1_or_nan(family, theta, z_treated, u_m)
        if not np.all(vals < c0):  # NaN (undefined branch) also fails
            return 0
    return 1


def _count_violations(family, theta, u_m, z_treated, c0) -> int:
    if np.isinf(c0):
        return 0
    v = 0 if phi0(family, theta, u_m) < c0 else 1
    if z_treated.size:
        vals = phi1_or_nan(family, theta, z_treated, u_m)
        v += int(z_treated.size - np.count_nonzero(vals < c0))
    return v


class _Problem:
    """Penalized transformed-scale objective shared by all starts."""

    def __init__(self, ws: WeightedSample, family: ModelFamily, grid: UGrid,
                 z_treated: np.ndarray, c0: float):
        self.ws = ws
        self.family = family
        self.grid = grid
        self.z_treated = z_treated
        self.c0 = c0
        self.u_m = float(grid.points[-1])

    def raw(self, theta: ModelParams) -> float:
        return objective(self.ws, self.family, theta, self.grid)

    def penalized(self, x: np.ndarray) -> float:
        theta = from_transformed(self.family, x)
        value = self.raw(theta)
        nviol = _count_violations(self.family, theta, self.u_m,
                                  self.z_treated, self.c0)
        return value + PENALTY_PER_VIOLATION * nviol


def _minimize_start(problem: _Problem, x0: np.ndarray,
                    config: SolverConfig) -> tuple[np.ndarray, float, bool]:
    """One Nelder-Mead descent; never returns a point worse than x0."""
    x0 = np.clip(x0, -BOX_HALF_WIDTH, BOX_HALF_WIDTH)
    f0 = problem.penalized(x0)
    if config.max_iters == 0:
        return x0, f0, True
    bounds = [(-BOX_HALF_WIDTH, BOX_HALF_WIDTH)] * 4
    opts = {"maxiter": config.max_iters, "xatol": config.tol_simplex,
            "fatol": config.tol_objective, "adaptive": False}
    res = minimize(problem.penalized, x0, method="Nelder-Mead",
                   bounds=bounds, options=opts)
    best_x, best_f, converged = res.x, float(res.fun), bool(res.success)
    if not converged:
        # budget ran out: restart with a fresh simplex at the incumbent
        res2 = minimize(problem.penalized, best_x, method="Nelder-Mead",
                        bounds=bounds, options=opts)
        if float(res2.fun) < best_f:
            best_x, best_f = res2.x, float(res2.fun)
        converged = bool(res2.success)
    if best_f < f0:
        return best_x, best_f, converged
    return x0, f0, converged


def _draw_starts(family: ModelFamily, theta_center: ModelParams,
                 config: SolverConfig) -> np.ndarray:
    x_center = np.clip(to_transformed(family, theta_center),
                       -BOX_HALF_WIDTH, BOX_HALF_WIDTH)
    starts = np.empty((config.n_starts, 4))
    for s in range(config.n_starts):
        gen = substream(config.seed, STREAM_START, s)
        starts[s] = np.clip(x_center + config.start_scale * rnorm(gen, 4),
                            -BOX_HALF_WIDTH, BOX_HALF_WIDTH)
    return starts


def _worker_estimate_start(s: int):
    st = _pool.worker_state()
    problem = st.get("problem")
    if problem is None:
        ds = Dataset(*st["arrays"], _skip_validation=True)
        ws = prepare(ds, fit_censoring_km(ds))
        config: SolverConfig = st["config"]
        problem = _Problem(ws, st["family"], grid_for(config),
                           ds.ztilde[ds.dtilde == 1], config.c0_value)
        st["problem"] = problem
    x, f, ok = _minimize_start(problem, st["starts"][s], st["config"])
    return x, f, ok


def estimate(dataset: Dataset, family: ModelFamily, config: SolverConfig,
             workers: int = 1) -> EstimationResult:
    """Minimum-distance estimate: best local minimum over random starts.

    Deterministic given (dataset, config): starts use per-index substreams
    of config.seed and the winner is chosen by (penalized value, then
    lexicographic parameter order), so neither execution order nor worker
    count can change the result.
    """
    n_treated = int(np.sum(dataset.dtilde == 1))
    if n_treated == 0 or n_treated == dataset.n:
        warnings.warn(
            "sample has no treated or no untreated observations; the "
            "treatment effect is weakly identified", stacklevel=2)
    theta_center = naive_fit(dataset, family)
    starts = _draw_starts(family, theta_center, config)
    state = {
        "arrays": (dataset.y, dataset.delta, dataset.ztilde, dataset.dtilde,
                   dataset.w),
        "family": family,
        "config": config,
        "starts": starts,
    }
    outcomes = _pool.run_indexed(_worker_estimate_start, config.n_starts,
                                 state, workers)
    n_converged = sum(1 for _, _, ok in outcomes if ok)
    if n_converged == 0 and config.max_iters > 0:
        warnings.warn("no start converged within the iteration budget",
                      stacklevel=2)
    thetas = [from_transformed(family, x) for x, _, _ in outcomes]
    values = [f for _, f, _ in outcomes]
    order = sorted(range(len(outcomes)),
                   key=lambda s: (values[s], tuple(thetas[s].as_array())))
    best = order[0]
    theta_hat = thetas[best]

    grid = grid_for(config)
    problem = _Problem(prepare(dataset, fit_censoring_km(dataset)), family,
                       grid, dataset.ztilde[dataset.dtilde == 1],
                       config.c0_value)
    flag = feasibility_check(family, theta_hat, grid, dataset, config.c0)
    if flag == 0:
        warnings.warn(
            "estimate lies outside the feasible region: quantile maps reach "
            "the censoring support bound c0 on the grid", stacklevel=2)
    return EstimationResult(
        theta_hat=theta_hat,
        objective_value=problem.raw(theta_hat),
        n_starts_converged=n_converged,
        per_start_minima=list(zip(thetas, values)),
        feasibility_flag=flag,
    )
