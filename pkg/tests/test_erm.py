import numpy as np
import pytest

from policyregret.core import ActionSet, ConfigurationError, Dataset, Policy, PolicyClass, RngStream, sample_iid
from policyregret.erm import (
    ThresholdObjective,
    class_values,
    erm_search,
    erm_search_refined,
    erm_threshold_exact,
)
from policyregret.meanvalue import aipw_table, value_estimate
from policyregret.nuisance import CallableNuisance, CrossFitPlan, OracleNuisance, cross_fit


def test_singleton_class(margin1, gen):
    d = sample_iid(margin1, 50, gen)
    res = erm_search(d, PolicyClass.threshold_grid([0.3]), OracleNuisance(margin1))
    assert res.policy == Policy.threshold(0.3) and res.gap == 0.0 and res.n_evaluated == 1


def test_duplicate_members_first_wins(margin1, gen):
    d = sample_iid(margin1, 50, gen)
    cls = PolicyClass("threshold-grid", (Policy.constant(1.0), Policy.threshold(0.0), Policy.threshold(0.0)))
    res = erm_search(d, cls, OracleNuisance(margin1))
    # pi_0 and the constant policy agree on (0, 1], so the first member wins the tie
    assert res.policy == Policy.constant(1.0)


def test_grid_argmax_matches_brute_force(margin1):
    d = sample_iid(margin1, 2000, RngStream(17, 0).generator())
    nu = OracleNuisance(margin1)
    cls = PolicyClass.threshold_range(0.0, 1.0, 101)
    res = erm_search(d, cls, nu)
    brute = [value_estimate(d, p, nu) for p in cls.members]
    assert res.policy == cls.members[int(np.argmax(brute))]
    assert res.est_value == max(brute)


def test_empty_class_rejected(margin1, gen):
    d = sample_iid(margin1, 10, gen)
    with pytest.raises(ConfigurationError):
        erm_search(d, PolicyClass("unrestricted", ()), OracleNuisance(margin1))


@pytest.mark.parametrize("seed", range(5))
def test_exact_threshold_erm_matches_every_breakpoint(margin1, seed):
    d = sample_iid(margin1, 300, RngStream(seed, 1).generator())
    cf = cross_fit(d, "histogram", CrossFitPlan.make(300, 2, seed))
    res = erm_threshold_exact(d, (0.1, 0.9), cf)
    xs = np.sort(d.x[:, 0])
    cands = [0.1] + [float(x) for x in xs if 0.1 < x <= 0.9]
    vals = [value_estimate(d, Policy.threshold(t), cf) for t in cands]
    best = max(vals)
    assert res.est_value == pytest.approx(best, abs=1e-12)
    assert 0.1 <= res.policy.params[0] <= 0.9
    assert res.policy.params[0] == cands[int(np.argmax(np.array(vals) >= best - 1e-12))]


def test_objective_is_piecewise_constant(margin1, gen):
    d = sample_iid(margin1, 100, gen)
    nu = OracleNuisance(margin1)
    obj = ThresholdObjective(aipw_table(d, nu), d.x[:, 0], margin1.action_set)
    xs = np.sort(d.x[:, 0])
    for a, b in zip(xs[:-1], xs[1:]):
        mid = 0.5 * (a + b)
        inner = a + 0.1 * (b - a)
        assert obj(inner) == obj(mid)
        assert obj(mid) == pytest.approx(value_estimate(d, Policy.threshold(float(mid)), nu), abs=1e-13)


def test_refined_flat_objective_returns_left_endpoint():
    # q constant and no observation follows either threshold action
    aset = ActionSet.binary()
    nu = CallableNuisance(aset, lambda a, x: np.full(x.shape[0], 0.4), lambda a, x: np.full(x.shape[0], 0.5))
    d = Dataset(np.linspace(0.05, 0.95, 30), np.ones(30), np.full(30, 0.4))
    res = erm_search_refined(d, (0.2, 0.7), nu)
    assert res.policy.params[0] == 0.2


@pytest.mark.parametrize("seed", range(20))
def test_refined_stays_in_range_and_beats_coarse_grid(margin1, seed):
    d = sample_iid(margin1, 400, RngStream(seed, 2).generator())
    nu = OracleNuisance(margin1)
    lo, hi = 0.15, 0.85
    res = erm_search_refined(d, (lo, hi), nu, grid0=17)
    assert lo <= res.policy.params[0] <= hi
    coarse = max(value_estimate(d, Policy.threshold(float(t)), nu) for t in np.linspace(lo, hi, 17))
    assert res.est_value >= coarse - 1e-12


def test_refined_rejects_small_grid_and_degenerate_range(margin1, gen):
    d = sample_iid(margin1, 30, gen)
    nu = OracleNuisance(margin1)
    with pytest.raises(ConfigurationError):
        erm_search_refined(d, (0.0, 1.0), nu, grid0=8)
    with pytest.raises(ConfigurationError):
        erm_search_refined(d, (0.5, 0.5), nu)
    with pytest.raises(ConfigurationError):
        erm_threshold_exact(d, (0.6, 0.5), nu)


def test_permutation_invariance_with_oracle(margin1, gen):
    d = sample_iid(margin1, 500, gen)
    perm = gen.permutation(500)
    nu = OracleNuisance(margin1)
    a = erm_threshold_exact(d, (0.0, 1.0), nu)
    b = erm_threshold_exact(d[perm], (0.0, 1.0), nu)
    assert a.policy == b.policy
    cls = PolicyClass.threshold_range(0.0, 1.0, 51)
    assert erm_search(d, cls, nu).policy == erm_search(d[perm], cls, nu).policy


def test_class_values_order(margin1, gen):
    d = sample_iid(margin1, 80, gen)
    cls = PolicyClass.threshold_grid([0.2, 0.5, 0.8])
    nu = OracleNuisance(margin1)
    assert np.allclose(class_values(d, cls, nu), [value_estimate(d, p, nu) for p in cls.members], atol=1e-14)
