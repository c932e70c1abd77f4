import math

import numpy as np
import pytest

from policyregret.core import (
    ActionSet,
    ConfigurationError,
    Dataset,
    DgpSpec,
    Observation,
    Policy,
    RngStream,
    UnsupportedError,
    margin_dgp,
    policy_distance,
    sample_iid,
)
from policyregret.medianvalue import (
    BandEdgeWarning,
    MedianContext,
    MedianNotReached,
    cdf_value_true,
    eif_median,
    eif_median_expectation,
    fdot_finite_difference,
    fdot_true,
    median_erm,
    median_value_estimate,
    median_value_true,
)
from policyregret.nuisance import CallableNuisance, OracleNuisance


class FixedCdfNuisance(CallableNuisance):
    """Constant q, g and conditional CDF, for direct-substitution checks."""

    def __init__(self, g=0.5, f=0.5):
        super().__init__(ActionSet.binary(), lambda a, x: np.full(x.shape[0], 0.5),
                         lambda a, x: np.full(x.shape[0], g))
        self._f = f

    @property
    def has_cdf(self):
        return True

    def cdf(self, v, a, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1) if np.ndim(x) < 2 else x
        return np.full(x.shape[0], self._f)


def empirical_cdf_nuisance():
    """g = 1 and a conditional CDF whose weight cancels when every action follows the policy."""
    class _Nu(FixedCdfNuisance):
        def cdf_mixture(self, v, a, x, w):
            return np.zeros(np.shape(v))
    return _Nu(g=1.0, f=0.0)


# -- true quantities ------------------------------------------------------------


def test_cdf_flat_examples(flat_band):
    one = Policy.constant(1.0)
    assert cdf_value_true(flat_band, one, 0.6) == pytest.approx(0.5, abs=1e-12)
    assert cdf_value_true(flat_band, one, 0.39) == 0.0
    assert cdf_value_true(flat_band, one, 0.81) == 1.0
    ms = np.linspace(0.3, 0.9, 61)
    vals = [cdf_value_true(flat_band, one, m) for m in ms]
    assert all(b >= a for a, b in zip(vals[:-1], vals[1:]))


def test_cdf_against_monte_carlo(band1):
    pol = Policy.constant(1.0)
    d = sample_iid(band1, 1_000_000, RngStream(9, 0).generator())
    # Y under action 1: draw again from the conditional law of action 1 only
    gen = RngStream(9, 1).generator()
    x = gen.random(1_000_000)
    y = band1.q(1.0, x) + band1.w_band * (2 * gen.random(1_000_000) - 1)
    p = float(np.mean(y <= 0.5))
    se = math.sqrt(p * (1 - p) / len(y))
    assert abs(cdf_value_true(band1, pol, 0.5) - p) < 3 * se
    assert len(d) == 1_000_000


def test_bernoulli_noise_unsupported(margin1):
    with pytest.raises(UnsupportedError):
        cdf_value_true(margin1, Policy.constant(1.0), 0.5)
    with pytest.raises(UnsupportedError):
        median_value_true(margin1, Policy.constant(1.0))


def test_median_flat_and_symmetric(flat_band, band1):
    assert median_value_true(flat_band, Policy.constant(1.0)) == pytest.approx(0.6, abs=1e-8)
    # Q(1, x) = 1/2 + (x - 1/2)/2 is symmetric about 1/2 over uniform x
    assert median_value_true(band1, Policy.constant(1.0)) == pytest.approx(0.5, abs=1e-8)


@pytest.mark.parametrize("tau", [0.1, 0.3, 0.5, 0.72])
def test_median_defining_property(band1, tau):
    pol = Policy.threshold(tau)
    m = median_value_true(band1, pol)
    assert cdf_value_true(band1, pol, m) >= 0.5
    assert cdf_value_true(band1, pol, m - 1e-8) < 0.5
    assert cdf_value_true(band1, pol, m) == pytest.approx(0.5, abs=1e-6)


def test_median_uniformly_continuous_in_policy(band1):
    for grid in (21, 41, 81):
        taus = np.linspace(0.0, 1.0, grid)
        meds = [median_value_true(band1, Policy.threshold(float(t))) for t in taus]
        c = max(abs(meds[i + 1] - meds[i]) / policy_distance(band1, Policy.threshold(float(taus[i])),
                                                              Policy.threshold(float(taus[i + 1])))
                for i in range(grid - 1))
        assert c < 1.0


def test_fdot_flat(flat_band):
    assert fdot_true(flat_band, Policy.constant(1.0)) == pytest.approx(2.5, abs=1e-12)


@pytest.mark.parametrize("tau", [0.0, 0.2, 0.5, 0.8])
def test_fdot_matches_finite_difference(band1, tau):
    pol = Policy.threshold(tau)
    assert abs(fdot_true(band1, pol) - fdot_finite_difference(band1, pol)) < 1e-4


def test_fdot_within_grid_bounds(band1):
    vals = [fdot_true(band1, Policy.threshold(float(t))) for t in np.linspace(0, 1, 21)]
    lo, hi = min(vals), max(vals)
    assert lo > 0 and hi < math.inf
    assert lo <= fdot_true(band1, Policy.threshold(0.37)) <= hi + 1e-12
    assert hi <= 1 / (2 * band1.w_band) + 1e-12


def test_fdot_lipschitz_in_policy(band1, gen):
    for _ in range(10):
        t1, t2 = (float(t) for t in gen.random(2))
        p1, p2 = Policy.threshold(t1), Policy.threshold(t2)
        for m in np.linspace(0.4, 0.6, 5):
            d = abs(fdot_true(band1, p1, m) - fdot_true(band1, p2, m))
            assert d <= 5.0 * policy_distance(band1, p1, p2) + 1e-12


def test_band_edge_flagged():
    # Q(pi(x), x) is 0.6 or 0.4; with w = 0.1 the median 0.5 is a band edge for every context
    spec = DgpSpec(family="linear", delta=0.1, noise="uniform-band", w_band=0.1, coef=(0.5, 0.0, 0.1, 0.0))
    with pytest.warns(BandEdgeWarning):
        fdot_true(spec, Policy.threshold(0.5), value=0.5)


# -- estimating equation --------------------------------------------------------


def test_estimate_reduces_to_sample_median():
    d = Dataset(np.array([0.1, 0.5, 0.9]), np.ones(3), np.array([0.9, 0.2, 0.5]))
    assert median_value_estimate(d, Policy.constant(1.0), empirical_cdf_nuisance()) == 0.5


def test_estimate_single_point():
    d = Dataset(np.array([0.4]), np.ones(1), np.array([0.37]))
    assert median_value_estimate(d, Policy.constant(1.0), empirical_cdf_nuisance()) == 0.37


def test_estimate_not_reached_returns_upper_bound():
    # no observation follows the policy and the CDF model is identically 0.2
    d = Dataset(np.linspace(0, 1, 5), -np.ones(5), np.linspace(0.1, 0.5, 5))
    with pytest.warns(MedianNotReached):
        v = median_value_estimate(d, Policy.constant(1.0), FixedCdfNuisance(f=0.2), reward_range=(0.0, 0.9))
    assert v == 0.9


def test_estimate_extra_grid_and_validation(band1, gen):
    d = sample_iid(band1, 200, gen)
    nu = OracleNuisance(band1)
    v0 = median_value_estimate(d, Policy.threshold(0.5), nu)
    v1 = median_value_estimate(d, Policy.threshold(0.5), nu, v_grid_extra=101)
    assert v1 <= v0
    with pytest.raises(ConfigurationError):
        median_value_estimate(d, Policy.threshold(0.5), nu, v_grid_extra=-1)


def test_estimate_needs_cdf(band1, gen):
    from policyregret.nuisance import fit_nuisances

    d = sample_iid(band1, 100, gen)
    with pytest.raises(ConfigurationError):
        median_value_estimate(d, Policy.constant(1.0), fit_nuisances(d, "parametric"))


@pytest.mark.slow
def test_estimate_rmse_with_oracle(band1):
    pol = Policy.threshold(0.4)
    truth = median_value_true(band1, pol)
    nu = OracleNuisance(band1)
    errs = [median_value_estimate(sample_iid(band1, 4000, RngStream(77, r).generator()), pol, nu) - truth
            for r in range(200)]
    assert math.sqrt(np.mean(np.square(errs))) < 0.05


def test_median_erm_within_range(band1, gen):
    d = sample_iid(band1, 500, gen)
    res = median_erm(d, (0.2, 0.8), OracleNuisance(band1))
    assert 0.2 <= res.policy.params[0] <= 0.8
    with pytest.raises(ConfigurationError):
        median_erm(d, (0.2, 0.8), OracleNuisance(band1), grid0=4)


# -- influence function ---------------------------------------------------------


def test_eif_direct_substitution():
    ctx = MedianContext(FixedCdfNuisance(g=0.5, f=0.5), fdot=2.5)
    pol = Policy.constant(1.0)
    assert eif_median(Observation((0.3,), 1.0, 0.1), pol, ctx, 0.5) == pytest.approx(0.4, abs=1e-15)
    assert eif_median(Observation((0.3,), -1.0, 0.1), pol, ctx, 0.5) == 0.0


def test_eif_scales_inversely_with_fdot(gen):
    pol = Policy.threshold(0.4)
    base = MedianContext(FixedCdfNuisance(g=0.3, f=0.35), fdot=1.7)
    for _ in range(20):
        o = Observation((float(gen.random()),), 1.0 if gen.random() < 0.5 else -1.0, float(gen.random()))
        ref = eif_median(o, pol, base, 0.5)
        for c in (0.5, 2.0, 8.0):
            scaled = MedianContext(base.nuisances, fdot=base.fdot * c)
            assert eif_median(o, pol, scaled, 0.5) == pytest.approx(ref / c, rel=1e-14, abs=1e-16)


def test_eif_requires_fdot():
    ctx = MedianContext(FixedCdfNuisance())
    with pytest.raises(ConfigurationError):
        eif_median(Observation((0.3,), 1.0, 0.1), Policy.constant(1.0), ctx, 0.5)
    with pytest.raises(ConfigurationError):
        MedianContext(FixedCdfNuisance(), fdot=0.0)
    with pytest.raises(ConfigurationError):
        MedianContext(FixedCdfNuisance(), c_neigh=-1.0)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_eif_mean_zero_with_oracle(alpha, gen):
    spec = margin_dgp(alpha, 0.1, noise="uniform-band")
    for tau in gen.random(4):
        assert abs(eif_median_expectation(spec, Policy.threshold(float(tau)))) < 1e-6


def test_eif_pointwise_matches_quadrature_mean(band1):
    pol = Policy.threshold(0.3)
    v = median_value_true(band1, pol)
    ctx = MedianContext(OracleNuisance(band1), fdot_true(band1, pol, v))
    d = sample_iid(band1, 200_000, RngStream(8, 8).generator())
    vals = np.array([eif_median(o, pol, ctx, v) for o in d[np.arange(20_000)]])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean()) < 3 * se
