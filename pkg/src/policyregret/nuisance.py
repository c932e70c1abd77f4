"""Outcome regression, action mechanism and conditional reward CDF.

Three learners share the :class:`NuisanceModel` surface: the exact oracle of a
:class:`~policyregret.core.DgpSpec`, a parametric fit (least squares for the
mean reward, multinomial logistic for the actions) and a histogram learner
with ``ceil(n ** (1/3))`` bins per axis. :func:`cross_fit` fits one model per
fold on the out-of-fold data.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

from .core import ActionSet, ConfigurationError, Dataset, DgpSpec, RngStream, _as_contexts, _as_rng

DELTA_CLIP = 0.01
RIDGE = 1e-8
METHODS = ("oracle", "parametric", "histogram")


@dataclass
class FitReport:
    method: str
    n_train: int
    empty_cell_fallbacks: int = 0
    condition_number: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class NuisanceModel:
    """Fitted (or oracle) nuisance functions.

    ``q`` predictions are clipped to [0, 1]; propensities are clipped to
    ``[delta_clip, 1 - delta_clip]`` and renormalized over the action set.
    """

    provenance = "base"

    def __init__(self, action_set: ActionSet, delta_clip: float = DELTA_CLIP, report: FitReport | None = None):
        if not 0.0 <= delta_clip < 0.5:
            raise ConfigurationError("delta_clip must lie in [0, 1/2)", "delta_clip")
        self.action_set = action_set
        self.delta_clip = delta_clip
        self.report = report or FitReport(self.provenance, 0)

    # subclasses supply these
    def _q_raw(self, a: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _probs_raw(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cdf_raw(self, v: np.ndarray, a: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def has_cdf(self) -> bool:
        return False

    def q(self, a, x) -> np.ndarray:
        xs = _as_contexts(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (xs.shape[0],))
        return np.clip(self._q_raw(a, xs), 0.0, 1.0)

    def g_matrix(self, x) -> np.ndarray:
        """``(n, k)`` clipped propensities over the ordered action set."""
        xs = _as_contexts(x)
        raw = self._probs_raw(xs)
        dc = self.delta_clip
        if self.action_set.k == 2:
            p1 = np.clip(raw[:, 1], dc, 1.0 - dc)
            return np.stack([1.0 - p1, p1], axis=1)
        p = np.clip(raw, dc, 1.0 - dc)
        p = p / p.sum(axis=1, keepdims=True)
        low = p.min(axis=1) < dc
        if np.any(low):
            k = self.action_set.k
            p[low] = dc + (1.0 - k * dc) * p[low]
        return p

    def g(self, a, x) -> np.ndarray:
        xs = _as_contexts(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (xs.shape[0],))
        idx = self.action_set.index_of(a)
        return self.g_matrix(xs)[np.arange(xs.shape[0]), idx]

    def cdf(self, v, a, x) -> np.ndarray:
        """``P(Y <= v | A=a, X=x)``; broadcasts ``v`` against the rows."""
        if not self.has_cdf:
            raise ConfigurationError(f"{self.provenance} nuisances carry no conditional CDF", "cdf_hat")
        xs = _as_contexts(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (xs.shape[0],))
        v = np.broadcast_to(np.asarray(v, dtype=np.float64), (xs.shape[0],))
        return np.clip(self._cdf_raw(v, a, xs), 0.0, 1.0)

    def cdf_mixture(self, v_sorted, a, x, weights) -> np.ndarray:
        """``sum_i weights[i] * cdf(v, a[i], x[i])`` at every ``v`` in ``v_sorted``."""
        if not self.has_cdf:
            raise ConfigurationError(f"{self.provenance} nuisances carry no conditional CDF", "cdf_hat")
        v = np.asarray(v_sorted, dtype=np.float64)
        xs = _as_contexts(x)
        a = np.asarray(a, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        out = np.empty(v.shape[0])
        for j, vj in enumerate(v):
            out[j] = np.dot(weights, self.cdf(vj, a, xs))
        return out


class OracleNuisance(NuisanceModel):
    """Exact nuisances of a known specification (data are ignored)."""

    provenance = "oracle"

    def __init__(self, spec: DgpSpec, delta_clip: float = DELTA_CLIP):
        super().__init__(spec.action_set, delta_clip, FitReport("oracle", 0))
        self.spec = spec

    def _q_raw(self, a, x):
        return self.spec.q(a, x)

    def _probs_raw(self, x):
        return self.spec.action_probs(x)

    @property
    def has_cdf(self) -> bool:
        return True

    def _cdf_raw(self, v, a, x):
        return self.spec.cdf(v, a, x)

    def cdf_mixture(self, v_sorted, a, x, weights):
        v = np.asarray(v_sorted, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        q = self.q(a, x)
        if self.spec.noise == "bernoulli":
            return (v >= 0.0) * np.dot(weights, 1.0 - q) + (v >= 1.0) * np.dot(weights, q)
        return _ramp_mixture(q - self.spec.w_band, q + self.spec.w_band, weights, v)


def _ramp_mixture(lo, hi, weights, v):
    """``sum_i w_i clip((v - lo_i) / (hi_i - lo_i), 0, 1)`` for equal-width ramps."""
    width = hi[0] - lo[0]
    order_lo = np.argsort(lo, kind="stable")
    order_hi = np.argsort(hi, kind="stable")
    lo_s, w_lo = lo[order_lo], weights[order_lo]
    hi_s, w_hi = hi[order_hi], weights[order_hi]
    cw_lo = np.concatenate(([0.0], np.cumsum(w_lo)))
    cwx_lo = np.concatenate(([0.0], np.cumsum(w_lo * lo_s)))
    cw_hi = np.concatenate(([0.0], np.cumsum(w_hi)))
    cwx_hi = np.concatenate(([0.0], np.cumsum(w_hi * hi_s)))
    k_lo = np.searchsorted(lo_s, v, side="right")
    k_hi = np.searchsorted(hi_s, v, side="right")
    rising = v * cw_lo[k_lo] - cwx_lo[k_lo]
    saturated = v * cw_hi[k_hi] - cwx_hi[k_hi]
    return (rising - saturated) / width


class CallableNuisance(NuisanceModel):
    """Nuisances given as plain functions, e.g. for hand-built test cases.

    ``g_fn(a, x)`` returns ``P(A=a | X=x)``; ``delta_clip`` defaults to 0 so
    degenerate mechanisms such as ``g == 1`` pass through unchanged.
    """

    provenance = "custom"

    def __init__(self, action_set: ActionSet, q_fn: Callable, g_fn: Callable, cdf_fn: Callable | None = None,
                 delta_clip: float = 0.0):
        super().__init__(action_set, delta_clip, FitReport("custom", 0))
        self._q_fn, self._g_fn, self._cdf_fn = q_fn, g_fn, cdf_fn

    def _q_raw(self, a, x):
        return np.broadcast_to(np.asarray(self._q_fn(a, x), dtype=np.float64), a.shape)

    def _probs_raw(self, x):
        cols = [np.broadcast_to(np.asarray(self._g_fn(np.full(x.shape[0], av), x), dtype=np.float64), (x.shape[0],))
                for av in self.action_set.values]
        return np.stack(cols, axis=1)

    def g_matrix(self, x):
        # no renormalization beyond the clip: hand-built mechanisms are taken as given
        xs = _as_contexts(x)
        return np.clip(self._probs_raw(xs), self.delta_clip, 1.0 - self.delta_clip if self.delta_clip else 1.0)

    @property
    def has_cdf(self) -> bool:
        return self._cdf_fn is not None

    def _cdf_raw(self, v, a, x):
        return np.broadcast_to(np.asarray(self._cdf_fn(v, a, x), dtype=np.float64), a.shape)


def _q_design(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = a.reshape(-1, 1)
    return np.hstack([np.ones_like(a), x, a, a * x])


class ParametricNuisance(NuisanceModel):
    """Least squares on ``(1, x, a, a x)`` and a multinomial logistic model in ``x``."""

    provenance = "parametric"

    def __init__(self, action_set, q_coef, g_coef, delta_clip=DELTA_CLIP, report=None):
        super().__init__(action_set, delta_clip, report)
        self.q_coef = q_coef
        self.g_coef = g_coef

    @classmethod
    def fit(cls, data: Dataset, action_set: ActionSet, delta_clip: float = DELTA_CLIP) -> "ParametricNuisance":
        report = FitReport("parametric", len(data))
        Z = _q_design(data.a, data.x)
        gram = Z.T @ Z
        cond = float(np.linalg.cond(gram))
        report.condition_number = cond
        ridge = 0.0
        if not np.isfinite(cond) or cond > 1e12:
            ridge = RIDGE
            report.notes.append("degenerate design: ridge 1e-8 added")
        q_coef = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), Z.T @ data.y)
        g_coef = _fit_softmax(data.x, action_set.index_of(data.a), action_set.k)
        return cls(action_set, q_coef, g_coef, delta_clip, report)

    def _q_raw(self, a, x):
        return _q_design(a, x) @ self.q_coef

    def _probs_raw(self, x):
        F = np.hstack([np.ones((x.shape[0], 1)), x])
        return special.softmax(F @ self.g_coef, axis=1)


def _fit_softmax(x: np.ndarray, labels: np.ndarray, k: int, ridge: float = RIDGE) -> np.ndarray:
    """Multinomial logistic regression on ``(1, x)`` by L-BFGS; the first class
    is the reference (its coefficients are pinned at zero)."""
    F = np.hstack([np.ones((x.shape[0], 1)), x])
    p = F.shape[1]
    Y = np.zeros((x.shape[0], k))
    Y[np.arange(x.shape[0]), labels] = 1.0

    def nll(theta):
        B = np.hstack([np.zeros((p, 1)), theta.reshape(p, k - 1)])
        eta = F @ B
        lse = special.logsumexp(eta, axis=1)
        val = np.sum(lse) - np.sum(Y * eta) + 0.5 * ridge * np.sum(theta**2)
        grad = F.T @ (special.softmax(eta, axis=1) - Y)
        return val, grad[:, 1:].reshape(-1) + ridge * theta

    res = optimize.minimize(nll, np.zeros(p * (k - 1)), jac=True, method="L-BFGS-B")
    return np.hstack([np.zeros((p, 1)), res.x.reshape(p, k - 1)])


class HistogramNuisance(NuisanceModel):
    """Per-(bin, action) means, action frequencies and empirical CDFs.

    Cells without data fall back to the action's global statistics; the count
    of such fallbacks is recorded in the fit report.
    """

    provenance = "histogram"

    def __init__(self, action_set, bins, q_table, p_table, cdf_groups, delta_clip=DELTA_CLIP, report=None):
        super().__init__(action_set, delta_clip, report)
        self.bins = bins
        self.q_table = q_table
        self.p_table = p_table
        self.cdf_groups = cdf_groups

    @classmethod
    def fit(cls, data: Dataset, action_set: ActionSet, delta_clip: float = DELTA_CLIP,
            bins: int | None = None) -> "HistogramNuisance":
        n, d = data.x.shape
        if bins is None:
            bins = int(math.ceil(n ** (1.0 / 3.0) - 1e-9))
        bins = max(bins, 1)
        k = action_set.k
        n_cells = bins**d
        report = FitReport("histogram", n)
        cell = _cell_index(data.x, bins)
        act = action_set.index_of(data.a)
        counts = np.zeros((n_cells, k))
        sums = np.zeros((n_cells, k))
        # sums are centered on a reference reward so constant rewards give exact means
        ref = float(data.y[0])
        np.add.at(counts, (cell, act), 1.0)
        np.add.at(sums, (cell, act), data.y - ref)
        act_counts = counts.sum(axis=0)
        global_mean = ref + float(np.mean(data.y - ref))
        act_mean = np.where(act_counts > 0, ref + sums.sum(axis=0) / np.maximum(act_counts, 1), global_mean)
        empty = counts == 0
        report.empty_cell_fallbacks = int(empty.sum())
        q_table = np.where(empty, act_mean[None, :], ref + sums / np.maximum(counts, 1))
        cell_tot = counts.sum(axis=1, keepdims=True)
        global_freq = act_counts / n
        p_table = np.where(cell_tot > 0, counts / np.maximum(cell_tot, 1), global_freq[None, :])
        groups: dict[tuple[int, int], np.ndarray] = {}
        order = np.lexsort((data.y, act, cell))
        keys = cell[order] * k + act[order]
        ys = data.y[order]
        split = np.flatnonzero(np.diff(keys)) + 1
        for chunk_keys, chunk_y in zip(np.split(keys, split), np.split(ys, split)):
            if chunk_keys.size:
                c, a = divmod(int(chunk_keys[0]), k)
                groups[(c, a)] = chunk_y
        for a in range(k):
            sel = np.sort(data.y[act == a])
            groups[(-1, a)] = sel if sel.size else np.sort(data.y)
        return cls(action_set, bins, q_table, p_table, groups, delta_clip, report)

    def _q_raw(self, a, x):
        cell = _cell_index(x, self.bins)
        return self.q_table[cell, self.action_set.index_of(a)]

    def _probs_raw(self, x):
        return self.p_table[_cell_index(x, self.bins)]

    @property
    def has_cdf(self) -> bool:
        return True

    def _group(self, c: int, a: int) -> np.ndarray:
        g = self.cdf_groups.get((c, a))
        return g if g is not None else self.cdf_groups[(-1, a)]

    def _cdf_raw(self, v, a, x):
        cell = _cell_index(x, self.bins)
        act = self.action_set.index_of(a)
        out = np.empty(cell.shape[0])
        for i, (c, j) in enumerate(zip(cell.tolist(), act.tolist())):
            ys = self._group(c, j)
            out[i] = np.searchsorted(ys, v[i], side="right") / ys.size
        return out

    def cdf_mixture(self, v_sorted, a, x, weights):
        v = np.asarray(v_sorted, dtype=np.float64)
        cell = _cell_index(_as_contexts(x), self.bins)
        act = self.action_set.index_of(a)
        key = cell * self.action_set.k + act
        uniq, inv = np.unique(key, return_inverse=True)
        wsum = np.bincount(inv, weights=np.asarray(weights, dtype=np.float64), minlength=uniq.size)
        pts, mass = [], []
        for kk, wk in zip(uniq.tolist(), wsum.tolist()):
            c, j = divmod(kk, self.action_set.k)
            ys = self._group(c, j)
            pts.append(ys)
            mass.append(np.full(ys.size, wk / ys.size))
        pts_a = np.concatenate(pts)
        mass_a = np.concatenate(mass)
        order = np.argsort(pts_a, kind="stable")
        cum = np.concatenate(([0.0], np.cumsum(mass_a[order])))
        return cum[np.searchsorted(pts_a[order], v, side="right")]


def _cell_index(x: np.ndarray, bins: int) -> np.ndarray:
    b = np.clip(np.floor(x * bins).astype(np.int64), 0, bins - 1)
    mult = bins ** np.arange(x.shape[1], dtype=np.int64)
    return b @ mult


def fit_nuisances(data: Dataset, method: str, spec: DgpSpec | None = None, action_set: ActionSet | None = None,
                  delta_clip: float = DELTA_CLIP, **kwargs) -> NuisanceModel:
    """Fit nuisances with ``method`` in ``{"oracle", "parametric", "histogram"}``."""
    if method == "oracle":
        if spec is None:
            raise ConfigurationError("oracle nuisances need the generating spec", "spec")
        return OracleNuisance(spec, delta_clip)
    aset = action_set or (spec.action_set if spec is not None else ActionSet(tuple(np.unique(data.a))))
    if len(data) == 0:
        raise ConfigurationError("cannot fit nuisances on an empty dataset", "data")
    if method == "parametric":
        return ParametricNuisance.fit(data, aset, delta_clip)
    if method == "histogram":
        return HistogramNuisance.fit(data, aset, delta_clip, **kwargs)
    raise ConfigurationError(f"unknown nuisance method {method!r}", "nuisance_method")


# ---------------------------------------------------------------------------
# Cross-fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossFitPlan:
    """Deterministic partition of ``range(n)`` into ``folds`` groups."""

    folds: int
    assignment: tuple[int, ...]

    @classmethod
    def make(cls, n: int, folds: int, rng=None) -> "CrossFitPlan":
        if folds < 1:
            raise ConfigurationError("folds must be at least 1", "folds")
        if folds > 1 and n < 2 * folds and folds != n:
            raise ConfigurationError(f"n={n} is below 2K={2 * folds}", "folds")
        if n < 1:
            raise ConfigurationError("n must be at least 1", "n")
        if folds == 1:
            return cls(1, (0,) * n)
        perm = _as_rng(rng if rng is not None else 0).permutation(n)
        assign = np.empty(n, dtype=np.int64)
        assign[perm] = np.arange(n) % folds
        return cls(folds, tuple(assign.tolist()))

    @property
    def n(self) -> int:
        return len(self.assignment)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == k)

    def fold_sizes(self) -> list[int]:
        return np.bincount(np.asarray(self.assignment), minlength=self.folds).tolist()


class CrossFit(dict):
    """Mapping ``fold -> NuisanceModel`` that predicts every observation with
    the model of its own fold."""

    def __init__(self, models: dict[int, NuisanceModel], plan: CrossFitPlan):
        super().__init__(models)
        self.plan = plan

    @classmethod
    def single(cls, model: NuisanceModel, n: int) -> "CrossFit":
        return cls({0: model}, CrossFitPlan(1, (0,) * n))

    @property
    def action_set(self) -> ActionSet:
        return next(iter(self.values())).action_set

    @property
    def has_cdf(self) -> bool:
        return all(m.has_cdf for m in self.values())

    def _apply(self, fn_name: str, a, x) -> np.ndarray:
        xs = _as_contexts(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (xs.shape[0],))
        if xs.shape[0] != self.plan.n:
            raise ConfigurationError("plan does not match the data length", "plan")
        out = np.empty(xs.shape[0])
        for k, model in self.items():
            rows = self.plan.members(k)
            if rows.size:
                out[rows] = getattr(model, fn_name)(a[rows], xs[rows])
        return out

    def q(self, a, x) -> np.ndarray:
        return self._apply("q", a, x)

    def g(self, a, x) -> np.ndarray:
        return self._apply("g", a, x)

    def cdf(self, v, a, x) -> np.ndarray:
        xs = _as_contexts(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (xs.shape[0],))
        v = np.broadcast_to(np.asarray(v, dtype=np.float64), (xs.shape[0],))
        out = np.empty(xs.shape[0])
        for k, model in self.items():
            rows = self.plan.members(k)
            if rows.size:
                out[rows] = model.cdf(v[rows], a[rows], xs[rows])
        return out

    def cdf_mixture(self, v_sorted, a, x, weights) -> np.ndarray:
        xs = _as_contexts(x)
        a = np.asarray(a, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        total = np.zeros(np.asarray(v_sorted).shape[0])
        for k, model in self.items():
            rows = self.plan.members(k)
            if rows.size:
                total += model.cdf_mixture(v_sorted, a[rows], xs[rows], weights[rows])
        return total

    def report(self) -> dict:
        first = next(iter(self.values()))
        return {
            "method": first.provenance,
            "folds": self.plan.folds,
            "fold_sizes": self.plan.fold_sizes(),
            "models": {str(k): m.report.to_dict() for k, m in sorted(self.items())},
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), sort_keys=True)


def cross_fit(data: Dataset, method: str, plan: CrossFitPlan, spec: DgpSpec | None = None,
              delta_clip: float = DELTA_CLIP, **kwargs) -> CrossFit:
    """Fit the fold-``k`` model on every observation outside fold ``k``.

    With a single fold the model is fit on all data (no sample splitting).
    """
    n = len(data)
    if plan.n != n:
        raise ConfigurationError("plan does not match the data length", "plan")
    if plan.folds > 1 and n < 2 * plan.folds and plan.folds != n:
        raise ConfigurationError(f"n={n} is below 2K={2 * plan.folds}", "folds")
    assign = np.asarray(plan.assignment)
    models = {}
    for k in range(plan.folds):
        train = np.flatnonzero(assign != k) if plan.folds > 1 else np.arange(n)
        models[k] = fit_nuisances(data[train], method, spec=spec, delta_clip=delta_clip, **kwargs)
    return CrossFit(models, plan)


def as_crossfit(nuisance, n: int) -> CrossFit:
    """Wrap a single model (applied to every row) as a one-fold :class:`CrossFit`."""
    if isinstance(nuisance, CrossFit):
        return nuisance
    if isinstance(nuisance, NuisanceModel):
        return CrossFit.single(nuisance, n)
    raise TypeError(f"expected NuisanceModel or CrossFit, got {type(nuisance).__name__}")


def make_plan(n: int, folds: int, rng: RngStream | None = None) -> CrossFitPlan:
    gen = rng.generator(1) if isinstance(rng, RngStream) else rng
    return CrossFitPlan.make(n, folds, gen)
