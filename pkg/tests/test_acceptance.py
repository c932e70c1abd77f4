"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Tolerances are fixed here and never tuned to results.
"""

import math
import sys
import time

import numpy as np
import pytest

from policyregret.bandit import DesignSchedule, WorkingModel, g_shape, martingale_check, run_design
from policyregret.core import (
    ActionSet,
    Dataset,
    DgpSpec,
    Policy,
    PolicyClass,
    Propensity,
    RngStream,
    margin_dgp,
    sample_iid,
    value_true,
)
from policyregret.erm import erm_search
from policyregret.meanvalue import eif_expectation, rem_n_diagnostic, value_estimate
from policyregret.medianvalue import (
    cdf_value_true,
    eif_median_expectation,
    median_value_estimate,
    median_value_true,
)
from policyregret.nuisance import CallableNuisance, OracleNuisance
from policyregret.plugin import margin_empirical, margin_law, margin_rate_check, plugin_regret
from policyregret.ratelab import RateExperiment, fit_rate, run_rate_experiment, slope_band

pytestmark = pytest.mark.acceptance


def _line(tag: str, ok: bool, detail: str) -> str:
    return f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print("\n" + _line(tag, ok, detail))
        assert ok, detail
    return emit


class _UnitPropensity(CallableNuisance):
    """``g = 1`` for every action, with a placeholder CDF that the estimating equation weights by zero."""

    def __init__(self):
        super().__init__(ActionSet.binary(), lambda a, x: np.zeros(x.shape[0]), lambda a, x: np.ones(x.shape[0]))

    @property
    def has_cdf(self):
        return True

    def cdf(self, v, a, x):
        return np.full(np.asarray(x).shape[0], 0.5)


# -- 1 -----------------------------------------------------------------------------


def check_1():
    spec = margin_dgp(1.0, 0.1)
    grid = PolicyClass.threshold_range(0.0, 1.0, 101).members
    t0 = time.perf_counter()
    worst = 0.0
    for n in (10, 100, 1000):
        d = sample_iid(spec, n, RngStream(1, n).generator())
        worst = max(worst, rem_n_diagnostic(d, grid, OracleNuisance(spec), None, spec))
    dt = time.perf_counter() - t0
    return worst <= 1e-6 and dt < 10, f"sup Rem_n = {worst:.2e} (tol 1e-6), {dt:.1f} s (limit 10 s)"


# -- 2 -----------------------------------------------------------------------------


def check_2():
    t0 = time.perf_counter()
    gen = np.random.default_rng(2)
    worst_mean = worst_median = 0.0
    for alpha in (0.5, 1.0, 2.0):
        mspec = margin_dgp(alpha, 0.1, propensity=Propensity(kind="logistic", intercept=-0.5, slope=1.0))
        bspec = margin_dgp(alpha, 0.1, noise="uniform-band",
                           propensity=Propensity(kind="logistic", intercept=-0.5, slope=1.0))
        for tau in gen.random(20):
            pol = Policy.threshold(float(tau))
            worst_mean = max(worst_mean, abs(eif_expectation(mspec, pol)))
            worst_median = max(worst_median, abs(eif_median_expectation(bspec, pol)))
    dt = time.perf_counter() - t0
    ok = worst_mean <= 1e-6 and worst_median <= 1e-6 and dt < 30
    return ok, f"max |E f| mean {worst_mean:.1e}, median {worst_median:.1e} (tol 1e-6), {dt:.1f} s (limit 30 s)"


# -- 3 -----------------------------------------------------------------------------


def check_3():
    t0 = time.perf_counter()
    exp = RateExperiment(margin_dgp(1.0, 0.1), "erm", PolicyClass.threshold_range(0.0, 1.0),
                         ns=(500, 2000, 8000, 32000), reps=200, seed=11)
    table = run_rate_experiment(exp)
    fit = fit_rate(table)
    lo, hi = slope_band(table)
    dt = time.perf_counter() - t0
    ok = fit.slope <= -0.6 and hi < -0.5 and not table.failures and dt < 300
    return ok, (f"slope {fit.slope:.3f} (se {fit.se:.3f}), 95% band [{lo:.3f}, {hi:.3f}] "
                f"(need slope <= -0.6, band excluding -0.5), {dt:.1f} s")


# -- 4 -----------------------------------------------------------------------------


def check_4():
    parts, ok = [], True
    for alpha in (0.5, 1.0, 2.0):
        s = margin_rate_check(margin_dgp(alpha), [0.05, 0.1, 0.2]).slope
        ok &= abs(s - (1 + alpha)) <= 0.1
        parts.append(f"alpha={alpha}: {s:.3f}")
    r = plugin_regret(margin_dgp(1.0), 0.2)
    ok &= abs(r - 0.02) <= 1e-6
    return ok, ", ".join(parts) + f" (tol 0.1); regret at h=0.2 {r:.9f} (target 0.02, tol 1e-6)"


# -- 5 -----------------------------------------------------------------------------


def check_5():
    worst, ok = 0.0, True
    for alpha in (0.5, 1.0, 2.0):
        est = margin_empirical(margin_dgp(alpha), [0.05, 0.1, 0.2], 100_000, RngStream(5, int(10 * alpha)))
        for t, p, se in est:
            z = abs(p - margin_law(alpha, t)) / se
            worst = max(worst, z)
            ok &= z <= 3
    return ok, f"max |z| = {worst:.2f} over 9 (alpha, t) points (limit 3)"


# -- 6 -----------------------------------------------------------------------------


def check_6a():
    nu = _UnitPropensity()
    gen = np.random.default_rng(6)
    ok = True
    for n in (1, 2, 3, 10, 101, 1000):
        y = gen.random(n)
        d = Dataset(gen.random(n), np.ones(n), y)
        target = float(np.sort(y)[math.ceil(n / 2) - 1])  # smallest y with empirical CDF >= 1/2
        ok &= median_value_estimate(d, Policy.constant(1.0), nu) == target
    return ok, "estimating equation equals the sample median exactly for n in {1, 2, 3, 10, 101, 1000}"


def check_6b():
    spec = margin_dgp(1.0, 0.1, noise="uniform-band")
    worst = 0.0
    for tau in (0.0, 0.1, 0.3, 0.5, 0.7, 0.9):
        pol = Policy.threshold(tau)
        worst = max(worst, abs(cdf_value_true(spec, pol, median_value_true(spec, pol)) - 0.5))
    return worst <= 1e-6, f"max |F(V) - 1/2| = {worst:.1e} (tol 1e-6)"


def check_6c():
    spec = margin_dgp(1.0, 0.1, noise="uniform-band")
    pol = Policy.threshold(0.4)
    truth = median_value_true(spec, pol)
    nu = OracleNuisance(spec)
    errs = [median_value_estimate(sample_iid(spec, 4000, RngStream(61, r).generator()), pol, nu) - truth
            for r in range(200)]
    rmse = math.sqrt(float(np.mean(np.square(errs))))
    return rmse < 0.05, f"RMSE at n=4000 over 200 reps = {rmse:.4f} (limit 0.05)"


def check_6d():
    spec = margin_dgp(1.0, 0.1, noise="uniform-band")
    exp = RateExperiment(spec, "median-erm", PolicyClass.threshold_range(0.0, 1.0),
                         ns=(500, 2000, 8000), reps=200, seed=2024)
    table = run_rate_experiment(exp)
    fit = fit_rate(table)
    ok = fit.slope <= -0.5 and not table.failures
    return ok, f"median-ERM slope {fit.slope:.3f} (se {fit.se:.3f}, need <= -0.5)"


# -- 7 -----------------------------------------------------------------------------


def check_7a():
    spec = margin_dgp(1.0, 0.1)
    worst = math.inf
    for k, sched in enumerate((DesignSchedule(), DesignSchedule(t=0.05, xi=0.02),
                               DesignSchedule(t=0.5, xi=0.3, t_power=0.25, t_floor=0.1, n0=20))):
        log = run_design(spec, sched, WorkingModel(), 5000, RngStream(71, k).generator())
        w, t = log.data.w[sched.n0:], log.t[sched.n0:]
        worst = min(worst, float(np.min(np.minimum(w - t, 1 - t - w))))
    return worst >= 0.0, f"min slack of w inside [t, 1 - t] = {worst:.3g} over three schedules (need >= 0)"


def check_7b():
    u = np.linspace(-1.0, 1.0, 10_000)
    worst, ok = -math.inf, True
    for t, xi in ((0.1, 0.25), (0.05, 0.02), (0.4, 0.5)):
        slope = np.max(np.diff(g_shape(u, t, xi)) / np.diff(u))
        excess = slope - (0.5 - t) / xi
        worst = max(worst, excess)
        ok &= excess <= 1e-12
    return ok, f"max slope minus (1/2 - t)/xi = {worst:.1e} (tol 1e-12)"


def check_7c():
    spec = margin_dgp(1.0, 0.1)
    pol = Policy.threshold(0.4)
    vals = np.array([martingale_check(run_design(spec, DesignSchedule(), WorkingModel(), 200,
                                                 RngStream(72, r).generator()), pol, spec) for r in range(500)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    return abs(vals.mean()) <= 3 * se, f"mean {vals.mean():.4f}, 3 se = {3 * se:.4f} over 500 reps"


def check_7d():
    t0 = time.perf_counter()
    exp = RateExperiment(margin_dgp(1.0, 0.1), "bandit-erm", PolicyClass.threshold_range(0.0, 1.0),
                         ns=(1000, 4000, 16000), reps=100, seed=12)
    table = run_rate_experiment(exp)
    fit = fit_rate(table)
    dt = time.perf_counter() - t0
    ok = fit.slope <= -0.5 and not table.failures and dt < 600
    return ok, f"bandit-ERM slope {fit.slope:.3f} (se {fit.se:.3f}, need <= -0.5), {dt:.1f} s"


# -- 8 -----------------------------------------------------------------------------


def check_8():
    spec = DgpSpec(family="discrete", delta=0.1, actions=(0.0, 1 / 3, 2 / 3, 1.0),
                   propensity=Propensity(kind="uniform"))
    nu = OracleNuisance(spec)
    pol = Policy.table((0.25, 0.5, 0.75), (1 / 3, 1.0, 0.0, 2 / 3))
    truth = value_true(spec, pol)
    vals = np.array([value_estimate(sample_iid(spec, 1000, RngStream(81, r).generator()), pol, nu)
                     for r in range(500)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    unbiased = abs(vals.mean() - truth) <= 3 * se
    cls = PolicyClass.table((0.25, 0.5, 0.75), spec.action_set)
    exact = 0
    for seed in range(20):
        d = sample_iid(spec, 500, RngStream(82, seed).generator())
        brute = [value_estimate(d, p, nu) for p in cls.members]
        exact += erm_search(d, cls, nu).policy == cls.members[int(np.argmax(brute))]
    ok = unbiased and exact == 20 and len(cls) == 256
    return ok, (f"bias {vals.mean() - truth:+.5f} vs 3 se {3 * se:.5f}; "
                f"ERM equals brute-force argmax on {exact}/20 seeds over {len(cls)} policies")


# -- 9 -----------------------------------------------------------------------------


def check_9():
    exp = RateExperiment(margin_dgp(1.0, 0.1), "erm", PolicyClass.threshold_range(0.0, 1.0),
                         ns=(500, 2000, 8000), reps=400, seed=2025, diagnostics=True)
    table = run_rate_experiment(exp)
    ns, ep = table.column("n"), table.column("ep_n")
    meds = [float(np.median(np.abs(ep[ns == n]) * math.sqrt(n))) for n in exp.ns]
    ok = meds[0] > meds[1] > meds[2] and not table.failures
    return ok, "median |EP_n| sqrt(n) = " + ", ".join(f"{m:.3f}" for m in meds) + " (need strictly decreasing)"


# -- 10 ----------------------------------------------------------------------------


def check_10():
    band = margin_dgp(1.0, 0.1, noise="uniform-band")
    exps = [
        RateExperiment(margin_dgp(1.0, 0.1), "erm", PolicyClass.threshold_range(0.0, 1.0),
                       nuisance_method="histogram", folds=2, ns=(100, 400), reps=20, seed=101, diagnostics=True),
        RateExperiment(margin_dgp(2.0, 0.1), "plugin", PolicyClass.threshold_range(0.0, 1.0),
                       ns=(100, 400), reps=20, seed=102),
        RateExperiment(band, "median-erm", PolicyClass.threshold_range(0.0, 1.0), ns=(100, 200), reps=20, seed=103),
        RateExperiment(margin_dgp(1.0, 0.1), "bandit-erm", PolicyClass.threshold_range(0.0, 1.0),
                       ns=(200, 400), reps=20, seed=104),
    ]
    same = 0
    for exp in exps:
        ref = run_rate_experiment(exp, 1).to_csv_text()
        same += all(run_rate_experiment(exp, k).to_csv_text() == ref for k in (1, 4))
    return same == len(exps), f"{same}/{len(exps)} experiments byte-identical across reruns and 1 or 4 threads"


CRITERIA = [
    ("1 Rem_n identity", check_1),
    ("2 EIF mean zero", check_2),
    ("3 ERM regret slope", check_3),
    ("4 plug-in exponents", check_4),
    ("5 margin law", check_5),
    ("6a median reduces to sample median", check_6a),
    ("6b median defining property", check_6b),
    ("6c median estimate RMSE", check_6c),
    ("6d median-ERM slope", check_6d),
    ("7a logged w within floor", check_7a),
    ("7b g_shape Lipschitz", check_7b),
    ("7c martingale mean zero", check_7c),
    ("7d bandit-ERM slope", check_7d),
    ("8 discrete actions", check_8),
    ("9 EP_n decreasing", check_9),
    ("10 determinism", check_10),
]


@pytest.mark.parametrize("tag,check", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_criterion(tag, check, report):
    report(tag, *check())


if __name__ == "__main__":
    failed = 0
    for tag, check in CRITERIA:
        ok, detail = check()
        failed += not ok
        print(_line(tag, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
