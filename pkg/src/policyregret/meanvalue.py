"""Efficient influence function and doubly robust (AIPW) value estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, Dataset, DgpSpec, Observation, Policy, context_quadrature, value_true
from .nuisance import CrossFit, CrossFitPlan, NuisanceModel, OracleNuisance, as_crossfit


@dataclass(frozen=True)
class EifContext:
    """Inputs of the mean-value influence function ``f_pi``.

    ``value_center`` is the centering constant (the true value in oracle
    diagnostics); ``bound_m`` defaults to ``2 + 1/delta_clip``, the almost-sure
    bound for rewards in [0, 1].
    """

    nuisances: NuisanceModel
    value_center: float
    bound_m: float | None = None

    def __post_init__(self):
        floor = (1.0 + 1.0 / max(self.nuisances.delta_clip, 1e-300)) + 1.0
        if self.bound_m is None:
            object.__setattr__(self, "bound_m", floor)
        elif self.bound_m < floor:
            raise ConfigurationError(f"bound_m must be at least {floor}", "bound_m")


def resolve_folds(folds, plan: CrossFitPlan | None, n: int) -> CrossFit:
    """Normalize the accepted nuisance arguments into a :class:`CrossFit`."""
    if isinstance(folds, CrossFit):
        if plan is not None and plan != folds.plan:
            raise ConfigurationError("plan disagrees with the fitted folds", "plan")
        if folds.plan.n != n:
            raise ConfigurationError("plan does not match the data length", "plan")
        return folds
    if isinstance(folds, NuisanceModel):
        return as_crossfit(folds, n)
    if isinstance(folds, dict):
        if plan is None:
            raise ConfigurationError("a fold map needs its plan", "plan")
        if plan.n != n:
            raise ConfigurationError("plan does not match the data length", "plan")
        return CrossFit(folds, plan)
    raise TypeError(f"unsupported nuisance argument {type(folds).__name__}")


def eif_mean(o: Observation, policy: Policy, ctx: EifContext) -> float:
    """``f_pi(o)`` for one observation (binary or finite discrete actions)."""
    x = np.asarray(o.x, dtype=np.float64).reshape(1, -1)
    pa = float(policy(x)[0])
    nu = ctx.nuisances
    out = float(nu.q(pa, x)[0]) - ctx.value_center
    if o.a == pa:
        out += (o.y - float(nu.q(o.a, x)[0])) / float(nu.g(o.a, x)[0])
    return out


def aipw_table(data: Dataset, folds, plan: CrossFitPlan | None = None, propensity: str = "model") -> np.ndarray:
    """``(n, k)`` matrix of doubly robust scores, one column per action.

    Entry ``[i, j]`` is ``1{A_i = a_j} (Y_i - q(A_i, X_i)) / g(A_i | X_i) + q(a_j, X_i)``
    with out-of-fold nuisances. ``propensity="logged"`` divides by the logged
    design probabilities ``data.w`` instead of the fitted mechanism.
    """
    n = len(data)
    if n == 0:
        raise ConfigurationError("empty data", "data")
    cf = resolve_folds(folds, plan, n)
    aset = cf.action_set
    a_idx = aset.index_of(data.a)
    q_all = np.stack([cf.q(av, data.x) for av in aset.values], axis=1)
    if propensity == "logged":
        if data.w is None:
            raise ConfigurationError("logged propensities requested but w is absent", "w")
        g_obs = data.w
    else:
        g_obs = cf.g(data.a, data.x)
    rows = np.arange(n)
    table = q_all.copy()
    table[rows, a_idx] += (data.y - q_all[rows, a_idx]) / g_obs
    return table


def policy_columns(policy: Policy, data: Dataset, action_set) -> np.ndarray:
    return action_set.index_of(policy(data.x))


def value_from_table(table: np.ndarray, cols: np.ndarray) -> float:
    return float(np.mean(table[np.arange(table.shape[0]), cols]))


def value_estimate(data: Dataset, policy: Policy, folds, plan: CrossFitPlan | None = None,
                   propensity: str = "model") -> float:
    """Cross-fitted AIPW estimate of the mean value of ``policy``."""
    table = aipw_table(data, folds, plan, propensity)
    cf = resolve_folds(folds, plan, len(data))
    return value_from_table(table, policy_columns(policy, data, cf.action_set))


def eif_values(data: Dataset, policy: Policy, nuisances, value_center: float, propensity: str = "model") -> np.ndarray:
    """``f_pi(O_i)`` for every row, centered at ``value_center``."""
    table = aipw_table(data, nuisances, None, propensity)
    cf = resolve_folds(nuisances, None, len(data))
    cols = policy_columns(policy, data, cf.action_set)
    return table[np.arange(len(data)), cols] - value_center


def eif_expectation(spec: DgpSpec, policy: Policy, nuisances: NuisanceModel | None = None,
                    value_center: float | None = None) -> float:
    """``E_P[f_pi(O)]`` by quadrature over contexts, exact in actions and rewards.

    Uses the true nuisances when ``nuisances`` is None and the true value when
    ``value_center`` is None; with both it vanishes up to quadrature error.
    """
    nu = nuisances if nuisances is not None else OracleNuisance(spec, 0.0)
    center = value_true(spec, policy) if value_center is None else value_center
    X, W = context_quadrature(spec, (policy,), extra_breaks=_nuisance_breaks(nu))
    pa = policy(X)
    ratio = spec.g(pa, X) / nu.g(pa, X)
    integrand = ratio * (spec.q(pa, X) - nu.q(pa, X)) + nu.q(pa, X)
    return float(np.dot(W, integrand)) - center


def _nuisance_breaks(nu: NuisanceModel) -> tuple[float, ...]:
    bins = getattr(nu, "bins", None)
    if bins:
        return tuple(np.arange(1, bins) / bins)
    return ()


def rem_n_diagnostic(data: Dataset, class_grid, folds, plan: CrossFitPlan | None, spec: DgpSpec) -> float:
    """``max_pi |V_hat(pi) - V(pi) - (P_n - P) f_pi|`` over ``class_grid``.

    ``f_pi`` uses the true nuisances centered at the true value.
    """
    n = len(data)
    table_hat = aipw_table(data, folds, plan)
    oracle = OracleNuisance(spec, 0.0)
    table_true = aipw_table(data, oracle)
    aset = spec.action_set
    worst = 0.0
    for policy in class_grid:
        cols = policy_columns(policy, data, aset)
        v_hat = value_from_table(table_hat, cols)
        v = value_true(spec, policy)
        pn_f = value_from_table(table_true, cols) - v
        p_f = eif_expectation(spec, policy, oracle, v)
        worst = max(worst, abs(v_hat - v - (pn_f - p_f)))
    if n == 0:
        raise ConfigurationError("empty data", "data")
    return worst
