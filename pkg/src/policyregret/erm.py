"""Empirical value maximization over policy classes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .core import ConfigurationError, Dataset, Policy, PolicyClass
from .meanvalue import aipw_table, resolve_folds

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ErmResult:
    policy: Policy
    est_value: float
    n_evaluated: int
    gap: float


def class_values(data: Dataset, cls: PolicyClass, folds, plan=None, table: np.ndarray | None = None) -> np.ndarray:
    """Estimated value of every member, in enumeration order."""
    if table is None:
        table = aipw_table(data, folds, plan)
    aset = resolve_folds(folds, plan, len(data)).action_set
    rows = np.arange(len(data))
    return np.array([np.mean(table[rows, aset.index_of(p(data.x))]) for p in cls.members])


def erm_search(data: Dataset, cls: PolicyClass, folds, plan=None) -> ErmResult:
    """Exhaustive argmax of the AIPW value over a finite class.

    Ties go to the first member in the class's enumeration order.
    """
    if len(cls.members) == 0:
        raise ConfigurationError("policy class is empty", "class")
    values = class_values(data, cls, folds, plan)
    j = int(np.argmax(values))
    return ErmResult(cls.members[j], float(values[j]), len(values), float(values.max() - values[j]))


class ThresholdObjective:
    """``tau -> V_hat(pi_tau)`` for ``pi_tau(x) = sign(x1 - tau)`` in O(log n).

    The estimate is piecewise constant in ``tau`` and only changes at the
    observed ``x1`` values.
    """

    def __init__(self, table: np.ndarray, x1: np.ndarray, action_set):
        n = table.shape[0]
        col_m = action_set.index_of(-1.0)
        col_p = action_set.index_of(1.0)
        order = np.argsort(x1, kind="stable")
        self.n = n
        self.xs = np.ascontiguousarray(x1[order])
        self.diff = np.ascontiguousarray(table[order, col_m] - table[order, col_p])
        self.base = float(np.sum(table[:, col_p]))
        self.prefix = np.cumsum(np.concatenate(([self.base], self.diff)))

    def __call__(self, tau: float) -> float:
        k = int(np.searchsorted(self.xs, tau, side="right"))
        return float(self.prefix[k]) / self.n

    def sweep(self, lo: float, hi: float) -> tuple[float, float]:
        tau, total = kernels.threshold_sweep(self.xs, self.diff, self.base, float(lo), float(hi))
        return tau, total / self.n


def _threshold_setup(data, folds, plan, table):
    if table is None:
        table = aipw_table(data, folds, plan)
    aset = resolve_folds(folds, plan, len(data)).action_set
    if not aset.is_binary:
        raise ConfigurationError("threshold classes need binary actions", "class")
    return ThresholdObjective(table, data.x[:, 0], aset)


def erm_threshold_exact(data: Dataset, tau_range: tuple[float, float], folds, plan=None,
                        table: np.ndarray | None = None) -> ErmResult:
    """Exact ERM over the continuum ``{sign(x1 - tau) : tau in tau_range}``.

    The estimate only changes at observed ``x1`` values, so scanning ``lo`` and
    every observed ``x1`` in ``(lo, hi]`` covers all distinct members. Ties keep
    the smallest ``tau``.
    """
    lo, hi = tau_range
    if not hi > lo:
        raise ConfigurationError("degenerate threshold range", "tau_range")
    obj = _threshold_setup(data, folds, plan, table)
    tau, best = kernels.threshold_sweep(obj.xs, obj.diff, obj.base, float(lo), float(hi))
    n_cand = 1 + int(np.unique(obj.xs[(obj.xs > lo) & (obj.xs <= hi)]).size)
    return ErmResult(Policy.threshold(tau), best / obj.n, n_cand, 0.0)


def erm_search_refined(data: Dataset, tau_range: tuple[float, float], folds, plan=None, grid0: int = 33,
                       tol: float = 1e-4, table: np.ndarray | None = None) -> ErmResult:
    """Coarse threshold grid followed by golden-section refinement.

    The bracket around the best grid point is shrunk until narrower than
    ``tol``. The best point seen wins, ties going to the smallest ``tau``; the
    reported gap is measured against every evaluated point.
    """
    if grid0 < 16:
        raise ConfigurationError("grid0 must be at least 16", "grid0")
    lo, hi = tau_range
    if not hi > lo:
        raise ConfigurationError("degenerate threshold range", "tau_range")
    obj = _threshold_setup(data, folds, plan, table)
    return _golden_refine(obj, lo, hi, grid0, tol)


def _golden_refine(obj, lo, hi, grid0, tol) -> ErmResult:
    grid = np.linspace(lo, hi, grid0)
    seen = {float(t): obj(float(t)) for t in grid}
    vals = np.array([seen[float(t)] for t in grid])
    j = int(np.argmax(vals))
    a = float(grid[max(j - 1, 0)])
    b = float(grid[min(j + 1, grid0 - 1)])
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = obj(c), obj(d)
    seen[c], seen[d] = fc, fd
    while b - a >= tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = obj(c)
            seen[c] = fc
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = obj(d)
            seen[d] = fd
    best = max(seen.values())
    tau = min(t for t, v in seen.items() if v == best)
    return ErmResult(Policy.threshold(tau), best, len(seen), 0.0)
