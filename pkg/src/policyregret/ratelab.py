"""Monte Carlo regret-rate experiments and log-log slope fits."""

from __future__ import annotations

import csv
import functools
import io
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .bandit import DesignSchedule, WorkingModel, bandit_erm, run_design
from .core import (
    ConfigurationError,
    Dataset,
    DgpSpec,
    Policy,
    PolicyClass,
    RngStream,
    optimal_value,
    regret_true,
    sample_iid,
    value_true,
)
from .erm import erm_search, erm_threshold_exact
from .meanvalue import aipw_table, eif_expectation, policy_columns, rem_n_diagnostic, value_estimate
from .medianvalue import MedianObjective, median_erm, median_value_true
from .nuisance import OracleNuisance, cross_fit, fit_nuisances, make_plan
from .plugin import GammaEstimate, plugin_policy

ESTIMATORS = ("erm", "plugin", "median-erm", "bandit-erm")
METHODS = ("oracle", "parametric", "histogram")
HEADER = ("n", "rep", "estimator", "regret", "value_error", "rem_n", "ep_n", "seconds")


class RateWarning(UserWarning):
    """Some sample sizes were dropped from a slope fit."""


def class_from_dict(d: dict, spec: DgpSpec, path: str = "class") -> PolicyClass:
    """Build a policy class from its JSON description.

    ``{"kind": "threshold", "lo": 0, "hi": 1}`` is the continuum of
    thresholds; ``"threshold-grid"`` takes ``taus``; ``"table"`` takes
    ``edges`` and uses the spec's action set; ``"unrestricted"`` takes nothing.
    """
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigurationError("missing class kind", f"{path}.kind")
    kind = d["kind"]
    try:
        if kind == "threshold":
            return PolicyClass.threshold_range(float(d.get("lo", 0.0)), float(d.get("hi", 1.0)),
                                               int(d.get("grid", 101)))
        if kind == "threshold-grid":
            return PolicyClass.threshold_grid(d["taus"])
        if kind == "table":
            return PolicyClass.table(tuple(float(e) for e in d["edges"]), spec.action_set)
        if kind == "unrestricted":
            return PolicyClass.unrestricted(spec)
    except KeyError as err:
        raise ConfigurationError("missing field", f"{path}.{err.args[0]}") from None
    except ConfigurationError as err:
        raise ConfigurationError(err.message, path) from None
    raise ConfigurationError(f"unknown class kind {kind!r}", f"{path}.kind")


def class_to_dict(cls: PolicyClass) -> dict:
    """Inverse of :func:`class_from_dict` for the kinds it accepts."""
    if cls.kind == "threshold-grid" and cls.continuum:
        lo, hi = cls.tau_range
        return {"kind": "threshold", "lo": lo, "hi": hi, "grid": len(cls)}
    if cls.kind == "threshold-grid":
        return {"kind": "threshold-grid", "taus": [p.params[0] for p in cls.members]}
    if cls.kind == "table":
        return {"kind": "table", "edges": list(cls.members[0].params[0])}
    if cls.kind == "unrestricted":
        return {"kind": "unrestricted"}
    raise ConfigurationError(f"class kind {cls.kind!r} has no JSON form", "class.kind")


@dataclass(frozen=True, eq=False)
class RateExperiment:
    """One regret-rate experiment: a DGP, an estimator and a grid of sample sizes.

    ``diagnostics`` attaches the Rem_n and EP_n columns (oracle specs only);
    ``timing`` fills the ``seconds`` column, which otherwise stays empty so
    tables are reproducible byte for byte.
    """

    dgp: DgpSpec
    estimator: str
    policy_class: PolicyClass
    nuisance_method: str = "oracle"
    folds: int = 1
    ns: tuple[int, ...] = (100, 200)
    reps: int = 20
    seed: int = 0
    schedule: DesignSchedule = field(default_factory=DesignSchedule)
    diagnostics: bool = False
    timing: bool = False
    class_spec: dict | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}", "experiment.estimator")
        if self.nuisance_method not in METHODS:
            raise ConfigurationError(f"nuisance_method must be one of {METHODS}", "experiment.nuisance_method")
        ns = tuple(int(n) for n in self.ns)
        object.__setattr__(self, "ns", ns)
        if len(ns) < 2 or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] < 1:
            raise ConfigurationError("ns must hold at least two strictly increasing sizes", "experiment.ns")
        if self.reps < 20:
            raise ConfigurationError("reps must be at least 20", "experiment.reps")
        if self.folds < 1:
            raise ConfigurationError("folds must be at least 1", "experiment.folds")
        if self.estimator in ("median-erm", "bandit-erm", "plugin") and self.policy_class.kind != "threshold-grid":
            raise ConfigurationError(f"{self.estimator} runs over threshold rules", "experiment.class")
        if self.estimator == "median-erm" and self.dgp.noise != "uniform-band":
            raise ConfigurationError("median-erm needs uniform-band rewards", "experiment.dgp.noise")

    @property
    def tau_range(self) -> tuple[float, float]:
        return self.policy_class.tau_range or (0.0, 1.0)

    @classmethod
    def from_dict(cls, d: dict, path: str = "experiment") -> "RateExperiment":
        if not isinstance(d, dict):
            raise ConfigurationError("must be an object", path)
        known = {"dgp", "estimator", "class", "nuisance_method", "folds", "ns", "reps", "seed", "schedule",
                 "diagnostics", "timing"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown keys {sorted(unknown)}", path)
        for key in ("dgp", "estimator", "ns"):
            if key not in d:
                raise ConfigurationError("missing field", f"{path}.{key}")
        spec = DgpSpec.from_dict(d["dgp"], f"{path}.dgp")
        cdict = d.get("class", {"kind": "threshold", "lo": 0.0, "hi": 1.0})
        pclass = class_from_dict(cdict, spec, f"{path}.class")
        sched = DesignSchedule.from_dict(d.get("schedule", {}), f"{path}.schedule")
        kw = {k: d[k] for k in ("nuisance_method", "folds", "reps", "seed", "diagnostics", "timing") if k in d}
        try:
            return cls(spec, d["estimator"], pclass, ns=tuple(d["ns"]), schedule=sched, class_spec=cdict, **kw)
        except ConfigurationError as err:
            raise ConfigurationError(err.message, path + err.path[len("experiment"):]) from None
        except (TypeError, ValueError) as err:
            raise ConfigurationError(str(err), path) from None

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "estimator": self.estimator,
            "class": self.class_spec or class_to_dict(self.policy_class),
            "nuisance_method": self.nuisance_method,
            "folds": self.folds,
            "ns": list(self.ns),
            "reps": self.reps,
            "seed": self.seed,
            "schedule": self.schedule.to_dict(),
            "diagnostics": self.diagnostics,
            "timing": self.timing,
        }


@dataclass
class RateRow:
    n: int
    rep: int
    estimator: str
    regret: float
    value_error: float
    rem_n: float | None = None
    ep_n: float | None = None
    seconds: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class RateTable:
    """Rows sorted by ``(n, rep)``; failed replications carry NaN regret and an error."""

    rows: list[RateRow]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def failures(self) -> list[RateRow]:
        return [r for r in self.rows if r.failed]

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(HEADER)
        for r in self.rows:
            wr.writerow([r.n, r.rep, r.estimator, _fmt(r.regret), _fmt(r.value_error), _fmt(r.rem_n),
                         _fmt(r.ep_n), _fmt(r.seconds)])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "RateTable":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header is None or tuple(header) != HEADER:
                raise ConfigurationError(f"expected header {','.join(HEADER)}", "csv.header")
            rows = []
            for lineno, rec in enumerate(rd, start=2):
                if len(rec) != len(HEADER):
                    raise ConfigurationError(f"line {lineno} has {len(rec)} fields", "csv")
                try:
                    opt = [None if s == "" else float(s) for s in rec[5:]]
                    rows.append(RateRow(int(rec[0]), int(rec[1]), rec[2], float(rec[3]), float(rec[4]), *opt))
                except ValueError as err:
                    raise ConfigurationError(f"line {lineno}: {err}", "csv") from None
        return cls(rows)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpDiagnostic:
    """Finite-grid surrogate of the EP_n term at the smallest usable radius ``s``."""

    value: float
    s: float
    enlarged: bool


def _centered_eif_means(data: Dataset, spec: DgpSpec, policies, table) -> np.ndarray:
    """``(P_n - P) f_pi`` for each policy with true nuisances centered at the true value."""
    oracle = OracleNuisance(spec, 0.0)
    out = []
    for p in policies:
        v = value_true(spec, p)
        pn = float(np.mean(table[np.arange(len(data)), policy_columns(p, data, spec.action_set)])) - v
        out.append(pn - eif_expectation(spec, p, oracle, v))
    return np.array(out)


def ep_n_diagnostic(data: Dataset, pi_hat: Policy, spec: DgpSpec, cls: PolicyClass, s_grid,
                    ball_grid: int = 21) -> EpDiagnostic:
    """Approximate ``inf_{pi*} sup_{||pi - pi*|| <= s} (P_n - P)(f_pi_hat - f_pi)``.

    Threshold classes only. The optimal set collects members within 1e-8 of
    the optimum plus the refined optimizer; the L2 ball of radius ``s`` around
    ``sign(x1 - tau*)`` is ``|tau - tau*| <= s**2 / 4``. The value at the
    smallest ``s`` whose balls are non-empty is returned; ``enlarged`` flags
    that the smallest requested ``s`` had to be skipped.
    """
    if cls.kind != "threshold-grid":
        raise ConfigurationError("EP_n diagnostic is implemented for threshold classes", "class")
    s_grid = sorted(float(s) for s in s_grid)
    if not s_grid or s_grid[0] <= 0:
        raise ConfigurationError("s_grid must hold positive radii", "s_grid")
    v_star, p_star = optimal_value(spec, cls)
    opt = {p_star.params[0]}
    for p in cls.members:
        if value_true(spec, p) >= v_star - 1e-8:
            opt.add(p.params[0])
    lo, hi = cls.tau_range
    table = aipw_table(data, OracleNuisance(spec, 0.0))
    g_hat = _centered_eif_means(data, spec, (pi_hat,), table)[0]
    for k, s in enumerate(s_grid):
        r = s * s / 4.0
        sups = []
        for t_star in sorted(opt):
            if cls.continuum:
                taus = np.linspace(max(lo, t_star - r), min(hi, t_star + r), ball_grid)
            else:
                taus = np.array([p.params[0] for p in cls.members if abs(p.params[0] - t_star) <= r])
            if taus.size == 0:
                continue
            ball = [Policy.threshold(float(t)) for t in np.unique(taus)]
            sups.append(float(np.max(g_hat - _centered_eif_means(data, spec, ball, table))))
        if sups:
            return EpDiagnostic(min(sups), s, k > 0)
    raise ConfigurationError("every ball in s_grid is empty", "s_grid")


EP_S_GRID = (0.01, 0.02, 0.05, 0.1, 0.2)


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=64)
def median_optimum(spec: DgpSpec, lo: float, hi: float) -> tuple[float, float]:
    """``(best median value, tau)`` over thresholds in ``[lo, hi]``."""
    taus = np.linspace(lo, hi, 41)
    vals = [median_value_true(spec, Policy.threshold(float(t))) for t in taus]
    j = int(np.argmax(vals))
    a, b = taus[max(j - 1, 0)], taus[min(j + 1, taus.size - 1)]
    res = optimize.minimize_scalar(lambda t: -median_value_true(spec, Policy.threshold(float(t))),
                                   bounds=(a, b), method="bounded", options={"xatol": 1e-7})
    if -res.fun > vals[j]:
        return float(-res.fun), float(res.x)
    return float(vals[j]), float(taus[j])


def _nuisances(exp: RateExperiment, data: Dataset, stream: RngStream):
    if exp.nuisance_method == "oracle":
        return OracleNuisance(exp.dgp)
    plan = make_plan(len(data), exp.folds, stream)
    return cross_fit(data, exp.nuisance_method, plan, spec=exp.dgp)


def run_cell(exp: RateExperiment, n: int, rep: int, stream: RngStream) -> RateRow:
    """One replication at one sample size."""
    spec, cls = exp.dgp, exp.policy_class
    rem = ep = None
    if exp.estimator == "bandit-erm":
        log = run_design(spec, exp.schedule, WorkingModel(), n, stream.generator(0))
        q_model = (OracleNuisance(spec) if exp.nuisance_method == "oracle"
                   else fit_nuisances(log.data, exp.nuisance_method, spec))
        res = bandit_erm(log, exp.tau_range, q_model)
        return RateRow(n, rep, exp.estimator, regret_true(spec, cls, res.policy),
                       res.est_value - value_true(spec, res.policy))
    data = sample_iid(spec, n, stream.generator(0))
    nu = _nuisances(exp, data, stream)
    if exp.estimator == "median-erm":
        res = median_erm(data, exp.tau_range, nu)
        best, _ = median_optimum(spec, *exp.tau_range)
        v_hat = median_value_true(spec, res.policy)
        return RateRow(n, rep, exp.estimator, best - v_hat, res.est_value - v_hat)
    if exp.estimator == "plugin":
        policy = plugin_policy(GammaEstimate.from_pseudo_outcomes(data, nu))
        regret = regret_true(spec, PolicyClass.unrestricted(spec), policy)
        return RateRow(n, rep, exp.estimator, regret, value_estimate(data, policy, nu) - value_true(spec, policy))
    table = aipw_table(data, nu)
    if cls.continuum:
        res = erm_threshold_exact(data, exp.tau_range, nu, table=table)
    else:
        res = erm_search(data, cls, nu)
    if exp.diagnostics and cls.kind == "threshold-grid":
        rem = rem_n_diagnostic(data, PolicyClass.threshold_range(*exp.tau_range).members, nu, None, spec)
        ep = ep_n_diagnostic(data, res.policy, spec, cls, EP_S_GRID).value
    return RateRow(n, rep, exp.estimator, regret_true(spec, cls, res.policy),
                   res.est_value - value_true(spec, res.policy), rem, ep)


def _cell(exp: RateExperiment, idx: int, n: int, rep: int) -> RateRow:
    t0 = time.perf_counter()
    try:
        row = run_cell(exp, n, rep, RngStream(exp.seed, idx))
    except Exception as err:  # noqa: BLE001 - a failed replication becomes a flagged row
        row = RateRow(n, rep, exp.estimator, math.nan, math.nan, error=f"{type(err).__name__}: {err}")
    if exp.timing:
        row.seconds = time.perf_counter() - t0
    return row


def run_rate_experiment(exp: RateExperiment, threads: int = 1) -> RateTable:
    """Run every ``(n, rep)`` cell; cell ``k`` (n-major order) draws from ``RngStream(seed, k)``."""
    if threads < 1:
        raise ConfigurationError("threads must be at least 1", "threads")
    cells = [(i * exp.reps + rep, n, rep) for i, n in enumerate(exp.ns) for rep in range(exp.reps)]
    if exp.estimator == "median-erm":
        median_optimum(exp.dgp, *exp.tau_range)
    optimal_value(exp.dgp, exp.policy_class)
    if threads == 1:
        rows = [_cell(exp, *c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _cell(exp, *c), cells))
    rows.sort(key=lambda r: (r.n, r.rep))
    return RateTable(rows)


# ---------------------------------------------------------------------------
# Slope fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    se: float
    intercept: float
    residuals: tuple[float, ...]
    ns_used: tuple[int, ...]
    statistic: str

    def to_dict(self) -> dict:
        return {"slope": self.slope, "se": self.se, "intercept": self.intercept,
                "ns_used": list(self.ns_used), "statistic": self.statistic}


def _aggregate(table: RateTable, statistic: str) -> tuple[np.ndarray, np.ndarray]:
    if statistic not in ("median", "mean"):
        raise ConfigurationError("statistic must be median or mean", "statistic")
    by_n: dict[int, list[float]] = {}
    for r in table.rows:
        if not math.isnan(r.regret):
            by_n.setdefault(r.n, []).append(r.regret)
    agg = np.median if statistic == "median" else np.mean
    ns = np.array(sorted(by_n), dtype=np.float64)
    return ns, np.array([float(agg(by_n[int(n)])) for n in ns])


def fit_points(ns, values, statistic: str = "median") -> RateFit:
    """OLS of ``log value`` on ``log n``; non-positive values are dropped with a warning."""
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = values > 0
    if not keep.all():
        warnings.warn(f"dropped n={ns[~keep].astype(int).tolist()} with non-positive {statistic} regret",
                      RateWarning, stacklevel=2)
    ns, values = ns[keep], values[keep]
    if np.unique(ns).size < 2:
        raise ConfigurationError("need at least two distinct n with positive regret", "table")
    lx, ly = np.log(ns), np.log(values)
    fit = stats.linregress(lx, ly)
    resid = ly - (fit.intercept + fit.slope * lx)
    # from the residuals directly: exact fits give se = 0 rather than rounding noise
    se = math.sqrt(float(resid @ resid) / (ns.size - 2) / float(np.sum((lx - lx.mean()) ** 2))) \
        if ns.size > 2 else math.nan
    return RateFit(float(fit.slope), se, float(fit.intercept), tuple(float(r) for r in resid),
                   tuple(int(n) for n in ns), statistic)


def fit_rate(table: RateTable, statistic: str = "median") -> RateFit:
    """Log-log slope of the per-``n`` median (or mean) regret."""
    ns, vals = _aggregate(table, statistic)
    return fit_points(ns, vals, statistic)


def slope_band(table: RateTable, statistic: str = "median", level: float = 0.95, n_boot: int = 1000,
               seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap band for the slope, resampling replications within each ``n``."""
    groups: dict[int, np.ndarray] = {}
    for r in table.rows:
        if not math.isnan(r.regret):
            groups.setdefault(r.n, []).append(r.regret)
    ns = sorted(groups)
    arrs = [np.asarray(groups[n]) for n in ns]
    agg = np.median if statistic == "median" else np.mean
    gen = np.random.default_rng(seed)
    lx = np.log(np.asarray(ns, dtype=np.float64))
    slopes = []
    for _ in range(n_boot):
        vals = np.array([agg(a[gen.integers(0, a.size, a.size)]) for a in arrs])
        if np.all(vals > 0):
            slopes.append(np.polyfit(lx, np.log(vals), 1)[0])
    if len(slopes) < n_boot // 2:
        raise ConfigurationError("too many bootstrap draws had non-positive regret", "table")
    alpha = (1.0 - level) / 2.0
    return float(np.quantile(slopes, alpha)), float(np.quantile(slopes, 1.0 - alpha))
