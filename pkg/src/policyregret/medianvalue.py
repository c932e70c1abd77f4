"""Median value of a policy: counterfactual CDF, estimating equation and EIF."""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import (
    ConfigurationError,
    Dataset,
    DgpSpec,
    Observation,
    Policy,
    UnsupportedError,
    quad_rule_1d,
)
from .meanvalue import resolve_folds
from .nuisance import NuisanceModel

N_SCAN = 2049


class MedianNotReached(UserWarning):
    """No candidate brought the estimating equation up to 1/2."""


class BandEdgeWarning(UserWarning):
    """The median sits on a band edge for a positive-measure set of contexts."""


@dataclass(frozen=True)
class MedianContext:
    """Inputs of the median influence function.

    Parameters
    ----------
    nuisances : NuisanceModel
        Must provide a conditional CDF.
    fdot : float, optional
        Derivative of the counterfactual CDF at the median.
    c_neigh : float
        Radius of the diagnostic neighbourhood around the median.
    """

    nuisances: NuisanceModel
    fdot: float | None = None
    c_neigh: float = 0.05

    def __post_init__(self):
        if not self.nuisances.has_cdf:
            raise ConfigurationError("median inference needs a conditional CDF", "nuisances")
        if self.fdot is not None and not self.fdot > 0:
            raise ConfigurationError("fdot must be positive", "fdot")
        if not self.c_neigh > 0:
            raise ConfigurationError("c_neigh must be positive", "c_neigh")


def _require_band(spec: DgpSpec):
    if spec.noise != "uniform-band":
        raise UnsupportedError("the median is degenerate under bernoulli rewards")


def _level_crossings(spec: DgpSpec, policy: Policy, level: float) -> list[float]:
    """Roots in (0, 1) of ``Q(pi(x), x) = level``, located by scan and Brent."""
    def h(x):
        x = np.asarray(x, dtype=np.float64)
        X = np.full((x.size, spec.context_dim), 0.5)
        X[:, 0] = x
        return spec.q(policy(X), X) - level

    grid = np.linspace(0.0, 1.0, N_SCAN)
    vals = h(grid)
    out = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        a, b = grid[i], grid[i + 1]
        # policy switches make h discontinuous; brentq still returns the jump point
        out.append(optimize.brentq(lambda t: float(h(t)[0]), a, b, xtol=1e-15))
    out.extend(float(x) for x in grid[1:-1][vals[1:-1] == 0.0])
    return out


def _rule(spec: DgpSpec, policy: Policy, levels=()):
    if not policy.depends_on_first_coordinate_only:
        raise UnsupportedError("median quadrature needs policies of the first coordinate")
    breaks = set(spec.singular_points) | set(policy.kinks())
    for lv in levels:
        breaks.update(_level_crossings(spec, policy, lv))
    nodes, weights = quad_rule_1d(tuple(sorted(breaks)))
    X = np.full((nodes.shape[0], spec.context_dim), 0.5)
    X[:, 0] = nodes
    return X, weights


def cdf_value_true(spec: DgpSpec, policy: Policy, m: float) -> float:
    """``F_pi(m) = E[P(Y <= m | A = pi(X), X)]`` by quadrature."""
    _require_band(spec)
    w = spec.w_band
    X, W = _rule(spec, policy, (m - w, m + w))
    return min(1.0, max(0.0, float(np.dot(W, spec.cdf(m, policy(X), X)))))


@functools.lru_cache(maxsize=1024)
def median_value_true(spec: DgpSpec, policy: Policy, tol: float = 1e-8) -> float:
    """``inf{m : F_pi(m) >= 1/2}`` by bisection to width ``tol``."""
    _require_band(spec)
    lo, hi = spec.reward_range
    lo -= 1e-3  # F(lo) = 0 < 1/2 strictly
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cdf_value_true(spec, policy, mid) >= 0.5:
            hi = mid
        else:
            lo = mid
    return hi


def fdot_true(spec: DgpSpec, policy: Policy, value: float | None = None) -> float:
    """Derivative of ``F_pi`` at the median for uniform-band noise.

    Equals ``P(|V - Q(pi(X), X)| < w) / (2 w)``. A warning is raised when the
    band edge ``|V - Q| = w`` carries positive context mass.
    """
    _require_band(spec)
    w = spec.w_band
    v = median_value_true(spec, policy) if value is None else value
    X, W = _rule(spec, policy, (v - w, v + w))
    gap = np.abs(v - spec.q(policy(X), X))
    # a positive-measure edge set shows up on an evenly spaced grid
    U = np.full((N_SCAN, spec.context_dim), 0.5)
    U[:, 0] = np.linspace(0.0, 1.0, N_SCAN)
    on_edge = np.abs(np.abs(v - spec.q(policy(U), U)) - w) < 1e-9
    # isolated crossings are null sets; an interval shows up as consecutive hits
    if np.any(on_edge[:-2] & on_edge[1:-1] & on_edge[2:]):
        warnings.warn(f"median on a band edge for context mass ~{on_edge.mean():.3g}", BandEdgeWarning,
                      stacklevel=2)
    return float(np.dot(W, gap < w)) / (2.0 * w)


def fdot_finite_difference(spec: DgpSpec, policy: Policy, step: float = 1e-5, value: float | None = None) -> float:
    """Central difference of ``F_pi`` at the median."""
    v = median_value_true(spec, policy) if value is None else value
    return (cdf_value_true(spec, policy, v + step) - cdf_value_true(spec, policy, v - step)) / (2.0 * step)


class MedianObjective:
    """Evaluates the median estimating equation for many policies on one sample.

    The observed-action propensities and the sorted rewards are shared across
    policies, so each evaluation costs one CDF mixture and a cumulative sum.
    """

    def __init__(self, data: Dataset, nuisances, plan=None, v_grid_extra: int = 0,
                 reward_range: tuple[float, float] | None = None):
        n = len(data)
        if n == 0:
            raise ConfigurationError("empty data", "data")
        if v_grid_extra < 0:
            raise ConfigurationError("v_grid_extra must be non-negative", "v_grid_extra")
        self.cf = resolve_folds(nuisances, plan, n)
        if not self.cf.has_cdf:
            raise ConfigurationError("median estimation needs a conditional CDF", "nuisances")
        self.data = data
        self.n = n
        self.g_obs = self.cf.g(data.a, data.x)
        self.order = np.argsort(data.y, kind="stable")
        self.y_sorted = data.y[self.order]
        lo, hi = (float(data.y.min()), float(data.y.max())) if reward_range is None else reward_range
        self.upper = hi
        extra = np.linspace(lo, hi, v_grid_extra) if v_grid_extra else np.empty(0)
        self.candidates = np.unique(np.concatenate((self.y_sorted, extra)))

    def curve(self, policy: Policy) -> np.ndarray:
        """``L(v)`` at every candidate ``v``."""
        pa = policy(self.data.x)
        c = (self.data.a == pa) / self.g_obs
        cum = np.concatenate(([0.0], np.cumsum(c[self.order])))
        s = cum[np.searchsorted(self.y_sorted, self.candidates, side="right")] / self.n
        r = self.cf.cdf_mixture(self.candidates, pa, self.data.x, (1.0 - c) / self.n)
        return s + r

    def __call__(self, policy: Policy) -> float:
        L = self.curve(policy)
        hit = np.flatnonzero(L >= 0.5 - 1e-12)
        if hit.size == 0:
            warnings.warn("estimating equation never reaches 1/2", MedianNotReached, stacklevel=2)
            return self.upper
        return float(self.candidates[hit[0]])


def median_value_estimate(data: Dataset, policy: Policy, nuisances, v_grid_extra: int = 0, plan=None,
                          reward_range: tuple[float, float] | None = None) -> float:
    """Smallest candidate ``v`` at which the estimating equation reaches 1/2.

    Candidates are the observed rewards plus ``v_grid_extra`` evenly spaced
    points over ``reward_range`` (the observed range by default). If no
    candidate qualifies, the upper end of the range is returned and
    :class:`MedianNotReached` is warned.
    """
    return MedianObjective(data, nuisances, plan, v_grid_extra, reward_range)(policy)


def eif_median(o: Observation, policy: Policy, ctx: MedianContext, value_center: float) -> float:
    """Median influence function at one observation."""
    if ctx.fdot is None or not ctx.fdot > 0:
        raise ConfigurationError("eif_median needs a positive fdot", "fdot")
    x = np.asarray(o.x, dtype=np.float64).reshape(1, -1)
    pa = float(policy(x)[0])
    nu = ctx.nuisances
    v = np.array([value_center])
    out = (float(nu.cdf(v, pa, x)[0]) - 0.5) / ctx.fdot
    if o.a == pa:
        resid = float(o.y <= value_center) - float(nu.cdf(v, o.a, x)[0])
        out += resid / (float(nu.g(o.a, x)[0]) * ctx.fdot)
    return out


def eif_median_expectation(spec: DgpSpec, policy: Policy, ctx: MedianContext | None = None,
                           value_center: float | None = None) -> float:
    """``E_P`` of the median influence function by quadrature.

    The reward integral is exact: given ``(A, X)`` the indicator averages to
    the true conditional CDF.
    """
    from .nuisance import OracleNuisance

    v = median_value_true(spec, policy) if value_center is None else value_center
    if ctx is None:
        ctx = MedianContext(OracleNuisance(spec, 0.0), fdot_true(spec, policy, v))
    nu = ctx.nuisances
    w = spec.w_band
    X, W = _rule(spec, policy, (v - w, v + w))
    pa = policy(X)
    vv = np.full(pa.shape, v)
    f_nu = nu.cdf(vv, pa, X)
    ratio = spec.g(pa, X) / nu.g(pa, X)
    integrand = ratio * (spec.cdf(vv, pa, X) - f_nu) + f_nu - 0.5
    return float(np.dot(W, integrand)) / ctx.fdot


def median_erm(data: Dataset, tau_range: tuple[float, float], nuisances, plan=None, grid0: int = 33,
               tol: float = 1e-4, v_grid_extra: int = 0):
    """Maximize the estimated median value over threshold rules.

    Coarse grid plus golden-section refinement, as for the mean value.
    """
    from .erm import _golden_refine

    if grid0 < 16:
        raise ConfigurationError("grid0 must be at least 16", "grid0")
    lo, hi = tau_range
    if not hi > lo:
        raise ConfigurationError("degenerate threshold range", "tau_range")
    obj = MedianObjective(data, nuisances, plan, v_grid_extra)
    return _golden_refine(lambda t: obj(Policy.threshold(t)), lo, hi, grid0, tol)
