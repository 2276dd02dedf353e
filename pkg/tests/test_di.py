import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2pdi import cox
from p2pdi import di
from p2pdi import splines
from p2pdi import synthetic as sy
from p2pdi.data_model import TERM, LoanTable

from conftest import random_table


@pytest.fixture(scope="module")
def market():
    tab, truth = sy.generate(sy.calibrated_market(8000, 17))
    model = cox.fit(tab.take(np.flatnonzero(tab.funded)), compute_concordance=False)
    return tab, truth, model


# binning and the point estimate --------------------------------------------------------


def test_bin_index_edges():
    edges = di.parse_bins("0:1.4:0.02")
    assert len(edges) == 71 and edges[-1] == 1.4
    b = di.bin_index([0.0, 1.16, 11 / 12 * 1.2 * 1.0, 1.3999, 1.4, -0.1], edges)
    np.testing.assert_array_equal(b, [0, 58, 55, 69, 70, 70])
    np.testing.assert_array_equal(di.parse_bins("0,1.1,1.16,1.2"), [0, 1.1, 1.16, 1.2])
    with pytest.raises(ValueError):
        di.parse_bins([1.0, 0.5])


def test_hand_example():
    y = np.array([0.5, 0.5, 0.5, 0.5, 1.2, 1.2, 1.2])
    male = np.array([1, 1, 0, 0, 1, 0, 0])
    funded = np.array([1, 0, 1, 1, 1, 1, 0], bool)
    est = di.nonparametric_di(y, funded, male, [0, 1, 1.4])
    np.testing.assert_allclose(est.per_bin_di, [0.5 - 1.0, 1.0 - 0.5])
    np.testing.assert_allclose(est.weights, [4 / 7, 3 / 7])
    assert est.average_di == pytest.approx(-0.5 * 4 / 7 + 0.5 * 3 / 7)


def test_missing_bins_renormalized():
    y = np.array([0.1, 0.1, 0.9, 0.9, 0.95])
    male = np.array([1, 0, 1, 0, 1])
    funded = np.array([1, 0, 1, 1, 1], bool)
    est = di.nonparametric_di(y, funded, male, [0, 0.5, 1.0, 1.2])
    assert est.missing.tolist() == [False, False, True]
    np.testing.assert_allclose(est.weights, [0.4, 0.6, 0])
    assert est.average_di == pytest.approx(0.4 * 1.0 + 0.6 * 0.0)


def test_single_gender_rejected():
    with pytest.raises(ValueError, match="both genders"):
        di.nonparametric_di([1.0, 1.1], [1, 1], [1, 1])


def test_identical_threshold_rule_gives_zero_everywhere():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 13, 5000) / 12 * (1 + rng.choice(sy.RATE_GRID, 5000))
    male = rng.integers(0, 2, 5000)
    est = di.nonparametric_di(y, y >= 1.16, male)
    np.testing.assert_array_equal(est.per_bin_di[~est.missing], 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_bin_identity_and_reordering(seed):
    rng = np.random.default_rng(seed)
    n = 400
    y = rng.uniform(0, 1.4, n)
    male = rng.integers(0, 2, n)
    male[:2] = [0, 1]
    funded = rng.random(n) < 0.7
    est = di.nonparametric_di(y, funded, male)
    ok = ~est.missing
    assert np.abs(est.male_rate[ok] - est.female_rate[ok] - est.per_bin_di[ok]).max() <= 1e-14
    assert ((est.male_rate[ok] >= 0) & (est.male_rate[ok] <= 1)).all()
    p = rng.permutation(n)
    again = di.nonparametric_di(y[p], funded[p], male[p])
    assert again.average_di == est.average_di
    np.testing.assert_array_equal(again.per_bin_di, est.per_bin_di)


def test_accumulator_matches_batch():
    rng = np.random.default_rng(2)
    y, f, m = rng.uniform(0, 1.3, 1000), rng.random(1000) < 0.8, rng.integers(0, 2, 1000)
    acc = di.DiAccumulator()
    for a in range(0, 1000, 300):
        acc.add(y[a:a + 300], f[a:a + 300], m[a:a + 300])
    assert acc.estimate().average_di == pytest.approx(di.nonparametric_di(y, f, m).average_di, abs=1e-15)


# imputation -----------------------------------------------------------------------------


def test_fully_observed_equals_empirical(rng):
    tab = random_table(300, rng, censored=np.zeros(300, bool))
    model = cox.fit(tab, compute_concordance=False, robust=False)
    imp = di.impute_returns(model, tab, np.random.default_rng(0))
    assert not imp.imputed.any()
    lam, _ = tab.observed_repayment()
    y = lam * (1 + tab.rate)
    np.testing.assert_array_equal(imp.y, y)
    assert di.nonparametric_di(imp.y, tab.funded, tab.male).average_di == \
        di.nonparametric_di(y, tab.funded, tab.male).average_di


def test_imputation_targets(market):
    tab, truth, model = market
    imp = di.impute_returns(model, tab, np.random.default_rng(1))
    lam, known = tab.observed_repayment()
    np.testing.assert_array_equal(imp.imputed, ~known)
    np.testing.assert_array_equal(imp.lam[known], lam[known])
    assert imp.imputed[~tab.funded].all()
    # censored funded loans continue from their first unobserved month
    tau, cens = tab.observation()
    c = tab.funded & cens & (tau < TERM)
    assert c.any()
    assert (imp.lam[c] * TERM >= tau[c]).all()
    np.testing.assert_allclose(imp.y, imp.lam * (1 + tab.rate))


def test_multiplier_bounds(market):
    tab, truth, model = market
    with pytest.raises(ValueError):
        di.impute_returns(model, tab, np.random.default_rng(0), multiplier=0.5)
    huge = di.impute_returns(model, tab, np.random.default_rng(0), multiplier=1e9)
    np.testing.assert_array_equal(huge.lam[~tab.funded], 0.0)
    same_u = np.random.default_rng(3).random((len(tab), TERM))
    a = di.impute_returns(model, tab, multiplier=1.0, uniforms=same_u)
    b = di.impute_returns(model, tab, multiplier=2.0, uniforms=same_u)
    assert (b.lam[~tab.funded] <= a.lam[~tab.funded]).all()


# OLS second stage -----------------------------------------------------------------------


def test_ols_kinds(market):
    tab, truth, model = market
    y = truth.return_rate
    m_di = di.ols_second_stage(tab, y, "DI")
    m_dc = di.ols_second_stage(tab, y, "DI_controls")
    m_dt = di.ols_second_stage(tab, y, "DT")
    assert m_di.included == [] and not any(n.startswith("ns(Y)") for n in m_dt.names)
    assert any(n.startswith("ns(Y)") for n in m_dc.names) and "married" in m_dc.included
    assert m_dt.ci[0] < m_dt.gender_coefficient < m_dt.ci[1]
    with pytest.raises(ValueError):
        di.ols_second_stage(tab, y, "logit")


def test_ols_matches_lstsq(market):
    tab, truth, _ = market
    y = truth.return_rate
    m = di.ols_second_stage(tab, y, "DI", y_df=3)
    B = splines.evaluate(splines.make_spec(y, 3), y)
    X = np.column_stack([np.ones(len(y)), tab.male, B])
    coef, *_ = np.linalg.lstsq(X, tab.funded.astype(float), rcond=None)
    np.testing.assert_allclose(m.coef, coef, atol=1e-10)


def test_aic_selection_keeps_gender_and_spline(market):
    tab, truth, _ = market
    y = truth.return_rate
    full = di.ols_second_stage(tab, y, "DI_controls")
    sel = di.ols_second_stage(tab, y, "DI_controls", aic_selection=True)
    assert sel.aic <= full.aic
    assert set(sel.included) <= set(full.included)
    assert sel.names[1] == "male" and any(n.startswith("ns(Y)") for n in sel.names)


def test_no_discrimination_null():
    rng = np.random.default_rng(4)
    base = random_table(20_000, rng, funded=False)
    y = rng.uniform(0.5, 1.3, 20_000)
    funded = rng.random(20_000) < np.clip(y - 0.2, 0, 1)
    tab = LoanTable(base.ids, base.male, funded, base.payments, base.columns)
    m = di.ols_second_stage(tab, y, "DI")
    assert abs(m.gender_coefficient) <= 3 * m.se


def test_rank_deficiency(rng):
    tab = random_table(50, rng)
    spec = splines.make_spec(np.linspace(0, 1.3, 50), 2)
    with pytest.raises(np.linalg.LinAlgError, match="rank deficient"):
        di.ols_second_stage(tab, np.full(50, 1.1), "DI", y_spec=spec)


def test_share_arithmetic():
    assert di.share_from_coefficients(-0.0388, -0.0244) == pytest.approx(0.371, abs=5e-4)


# bootstrap --------------------------------------------------------------------------------


def test_two_replicates_min_max(market):
    tab, truth, model = market
    res = di.bootstrap_di(tab, di.BootstrapConfig(n_bootstrap=2, seed=3), model=model)
    r = res.estimate.replicates
    assert len(r) == 2
    lo, hi = res.estimate.average_ci
    assert (lo, hi) == (r.min(), r.max())


def test_percentile_ci_degenerate():
    lo, hi = di.percentile_ci(np.array([3.0, 1.0]))
    assert (lo, hi) == (1.0, 3.0)
    lo, hi = di.percentile_ci(np.arange(1000.0))
    assert (lo, hi) == (24.0, 975.0)


def test_bootstrap_reproducible_across_threads(market):
    tab, truth, model = market
    a = di.bootstrap_di(tab, di.BootstrapConfig(n_bootstrap=6, seed=5, threads=1), model=model)
    b = di.bootstrap_di(tab, di.BootstrapConfig(n_bootstrap=6, seed=5, threads=3), model=model)
    np.testing.assert_array_equal(a.estimate.replicates, b.estimate.replicates)
    assert a.estimate.average_ci == b.estimate.average_ci
    assert a.estimate.average_di == b.estimate.average_di


def test_bootstrap_failures_counted(market, monkeypatch):
    tab, truth, model = market
    real = cox.fit
    calls = {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] % 5 == 0:
            raise cox.FitError("synthetic failure")
        return real(*a, **kw)

    monkeypatch.setattr(cox, "fit", flaky)
    res = di.bootstrap_di(tab, di.BootstrapConfig(n_bootstrap=10, seed=1, max_failure_rate=0.5), model=model)
    assert res.estimate.failures == 2 and res.estimate.n_bootstrap == 8
    with pytest.raises(di.BootstrapError):
        di.bootstrap_di(tab, di.BootstrapConfig(n_bootstrap=10, seed=1), model=model)


def test_bootstrap_config_validation():
    with pytest.raises(ValueError):
        di.BootstrapConfig(n_bootstrap=1)
    with pytest.raises(ValueError):
        di.BootstrapConfig(multiplier=0.9)


# subsets -----------------------------------------------------------------------------------


def test_subset_all_equals_full(market):
    tab, truth, _ = market
    y = truth.return_rate
    out = di.disaggregate_di(tab, y, {"all": "all"})
    assert out["all"].average_di == di.nonparametric_di(y, tab.funded, tab.male).average_di


def test_subset_expressions(market):
    tab, truth, _ = market
    np.testing.assert_array_equal(di.subset_mask(tab, "employment == 1"), tab["employment"] == 1)
    np.testing.assert_array_equal(di.subset_mask(tab, "rate >= 0.3 and age < 30"),
                                  (tab["rate"] >= 0.3) & (tab["age"] < 30))
    np.testing.assert_array_equal(di.subset_mask(tab, "not married"), tab["married"] == 0)
    for bad in ("__import__('os')", "foo > 1", "age >"):
        with pytest.raises(ValueError):
            di.subset_mask(tab, bad)
    assert di.parse_subset("students=employment == 1") == ("students", "employment == 1")
    with pytest.raises(ValueError):
        di.parse_subset("employment == 1")
    out = di.disaggregate_di(tab, truth.return_rate, {"none": "age > 1000", "f": "male == 0"})
    assert out["none"] is None and out["f"] is None


def test_subgroup_thresholds_ordered():
    """Subgroup-specific thresholds: the recovered subgroup DIs follow the construction."""
    def rule(cols, truth):
        pi_f = np.where(cols["married"] == 1, 1.00, 1.05)
        pi = np.where(truth.male == 1, 1.10, pi_f)
        return truth.return_rate >= pi - sy.FUNDING_TOL

    tab, t = sy.generate(dataclasses.replace(sy.calibrated_market(30_000, 4), funding_rule=rule))
    out = di.disaggregate_di(tab, t.return_rate, {"married": "married == 1", "single": "married == 0"})
    assert out["married"].average_di < out["single"].average_di < 0


# sensitivity -------------------------------------------------------------------------------


def test_linear_extrapolation_exact():
    x = np.array([1.0, 1.5, 2.0, 2.5, 3.0])
    slope, intercept, r2, root = di.linear_extrapolation(x, -0.04 + 0.002 * x)
    assert root == pytest.approx(20.0)
    assert r2 == pytest.approx(1.0)
    assert di.linear_extrapolation([1.0], [0.1]) == (None, None, None, None)


def test_sensitivity_sweep_monotone(market):
    tab, truth, model = market
    res = di.sensitivity_sweep(model, tab, seed=2)
    np.testing.assert_array_equal(res.multipliers, di.DEFAULT_MULTIPLIERS)
    with pytest.raises(ValueError):
        di.sensitivity_sweep(model, tab, multipliers=[0.5, 1.0])
    again = di.sensitivity_sweep(model, tab, seed=2)
    np.testing.assert_array_equal(res.average_di, again.average_di)
    assert res.to_dict()["multipliers"] == list(di.DEFAULT_MULTIPLIERS)
