"""Plug-in policies from an estimated conditional action effect."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    ConfigurationError,
    Dataset,
    DgpSpec,
    Observation,
    Policy,
    PolicyClass,
    UnsupportedError,
    _as_contexts,
    _as_rng,
    regret_true,
)
from .meanvalue import resolve_folds
from .nuisance import HistogramNuisance, NuisanceModel


@dataclass(frozen=True, eq=False)
class GammaEstimate:
    """Estimate ``gamma_hat`` of ``gamma(x) = Q(1, x) - Q(-1, x)``.

    ``source`` is ``"oracle"``, ``"oracle-perturbed"`` (``gamma - h``) or
    ``"pseudo-outcome-regression"``.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    source: str
    h: float | None = None

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(_as_contexts(x)), dtype=np.float64)

    def scaled(self, c: float) -> "GammaEstimate":
        return GammaEstimate(lambda x, f=self.fn: c * f(x), self.source, self.h)

    @classmethod
    def oracle(cls, spec: DgpSpec) -> "GammaEstimate":
        return cls(spec.gamma, "oracle")

    @classmethod
    def oracle_perturbed(cls, spec: DgpSpec, h: float) -> "GammaEstimate":
        return cls(lambda x: spec.gamma(x) - h, "oracle-perturbed", float(h))

    @classmethod
    def from_pseudo_outcomes(cls, data: Dataset, nuisances, plan=None, bins: int | None = None) -> "GammaEstimate":
        """Histogram regression of the doubly robust pseudo-outcomes on ``x``."""
        gam = pseudo_outcomes(data, nuisances, plan)
        reg = HistogramNuisance.fit(Dataset(data.x, np.ones(len(data)), gam), _ONE_ACTION, 0.0, bins=bins)
        return cls(lambda x: reg._q_raw(np.ones(x.shape[0]), x), "pseudo-outcome-regression")


class _OneAction:
    """Degenerate action set used to reuse the histogram learner for regression."""

    values = (1.0,)
    k = 1
    is_binary = False

    def index_of(self, a):
        return np.zeros(np.shape(a), dtype=np.int64)


_ONE_ACTION = _OneAction()


def pseudo_outcome(o: Observation, nuisances: NuisanceModel) -> float:
    """``a / g(a|x) (y - q(a, x)) + q(1, x) - q(-1, x)``."""
    if not nuisances.action_set.is_binary:
        raise UnsupportedError("pseudo-outcomes need binary actions")
    x = np.asarray(o.x, dtype=np.float64).reshape(1, -1)
    q = nuisances.q
    resid = o.y - float(q(o.a, x)[0])
    return o.a / float(nuisances.g(o.a, x)[0]) * resid + float(q(1.0, x)[0]) - float(q(-1.0, x)[0])


def pseudo_outcomes(data: Dataset, nuisances, plan=None) -> np.ndarray:
    cf = resolve_folds(nuisances, plan, len(data))
    if not cf.action_set.is_binary:
        raise UnsupportedError("pseudo-outcomes need binary actions")
    q_obs = cf.q(data.a, data.x)
    return data.a / cf.g(data.a, data.x) * (data.y - q_obs) + cf.q(1.0, data.x) - cf.q(-1.0, data.x)


def plugin_policy(gamma_hat: GammaEstimate) -> Policy:
    """Action 1 where ``gamma_hat > 0`` and -1 elsewhere (ties go to -1)."""
    return Policy("sign", (gamma_hat,))


def margin_empirical(spec: DgpSpec, t_grid, n_mc: int, rng) -> list[tuple[float, float, float]]:
    """Monte Carlo ``(t, P(0 < |gamma(X)| <= t), standard error)`` triples."""
    for t in t_grid:
        if not 0.0 < t <= 0.5:
            raise ConfigurationError("t must lie in (0, 1/2]", "t_grid")
    gen = _as_rng(rng)
    x = gen.random((n_mc, spec.context_dim))
    ag = np.abs(spec.gamma(x))
    out = []
    for t in t_grid:
        p = float(np.mean((ag > 0) & (ag <= t)))
        out.append((float(t), p, math.sqrt(p * (1.0 - p) / n_mc)))
    return out


def margin_law(alpha: float, t: float) -> float:
    """Exact ``P(0 < |gamma_alpha(X)| <= t)`` for the canonical margin family."""
    return min(1.0, (2.0 * t) ** alpha)


class RegretZeroWarning(UserWarning):
    """A perturbation produced exactly zero regret and was left out of a fit."""


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    h: tuple[float, ...]
    regret: tuple[float, ...]

    @property
    def constant(self) -> float:
        return math.exp(self.intercept)


def plugin_regret(spec: DgpSpec, h: float) -> float:
    """Regret, against all policies, of the plug-in rule built from ``gamma - h``."""
    policy = plugin_policy(GammaEstimate.oracle_perturbed(spec, h))
    return regret_true(spec, PolicyClass.unrestricted(spec), policy)


def margin_rate_check(spec: DgpSpec, h_grid) -> ExponentFit:
    """Least-squares slope of log regret on log ``h`` for sup-norm shifts ``h``."""
    hs, rs = [], []
    for h in h_grid:
        if not 0.0 < h <= 0.2:
            raise ConfigurationError("h must lie in (0, 0.2]", "h_grid")
        r = plugin_regret(spec, h)
        if r <= 0.0:
            warnings.warn(f"zero regret at h={h}; point excluded", RegretZeroWarning, stacklevel=2)
            continue
        hs.append(float(h))
        rs.append(float(r))
    if len(hs) < 2:
        raise ConfigurationError("fewer than two usable perturbations", "h_grid")
    slope, intercept = np.polyfit(np.log(hs), np.log(rs), 1)
    return ExponentFit(float(slope), float(intercept), tuple(hs), tuple(rs))
