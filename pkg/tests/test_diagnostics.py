import dataclasses

import numpy as np
import pytest
from scipy import stats

from p2pdi import cox, diagnostics as dg, synthetic as sy
from p2pdi.data_model import CONTINUOUS, TERM, encode_survival
from p2pdi.design import DesignConfig

from conftest import random_table
from oracles import efron_loglik, episode_rows

ONE = DesignConfig(binary=("married",), categorical=(), continuous=(), time_interactions=())
SMALL = DesignConfig(binary=("male", "married"), categorical=(), continuous=("age",),
                     spline_df={"age": 1}, time_df=2, time_interactions=("male",))
NO_TIME = DesignConfig(binary=("male", "married"), categorical=(), continuous=("age",),
                       spline_df={"age": 1}, time_interactions=())
LINEAR = DesignConfig(categorical=("employment", "education"), spline_df={c: 1 for c in CONTINUOUS},
                      time_interactions=())


def fitted(n, seed, config=SMALL):
    rng = np.random.default_rng(seed)
    tab = random_table(n, rng)
    return cox.fit(tab, config), tab


def ph_market(n, seed, flip=False):
    spec = sy.recovery_market(n, seed, male_time=(0.0, 0.0, 0.0))
    hz = dataclasses.replace(spec.hazard, baseline=sy.CALIBRATED_BASELINE)
    if flip:
        coef = dict(hz.coef, male=0.0)
        hz = dataclasses.replace(hz, baseline=sy.RECOVERY_BASELINE, coef=coef,
                                 varying={"male": (0.5,) * 6 + (-0.5,) * 6})
    return dataclasses.replace(spec, hazard=hz)


# Schoenfeld ---------------------------------------------------------------------


def test_toy_residuals_by_hand():
    # one covariate, two events at different months, no ties
    tau = np.array([2, 5, 7, 12])
    cens = np.array([False, False, True, True])
    tab = random_table(4, np.random.default_rng(0), tau=tau, censored=cens)
    tab = tab.with_columns(married=np.array([1, 0, 1, 0]))
    model = cox.fit(tab, ONE, compute_concordance=False, robust=False)
    rep = dg.schoenfeld(model, tab)
    b = model.beta[0]
    x = np.array([1.0, 0.0, 1.0, 0.0])
    w = np.exp(b * x)
    # month 2: everyone at risk; month 5: loans 1..3
    r1 = 1.0 - (w @ x) / w.sum()
    r2 = 0.0 - (w[1:] @ x[1:]) / w[1:].sum()
    np.testing.assert_allclose(rep.residuals[:, 0], [r1, r2], atol=1e-12)
    np.testing.assert_array_equal(rep.event_time, [2, 5])


@pytest.mark.parametrize("seed", range(6))
def test_untied_residuals_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 20
    tau = rng.permutation(np.arange(20)) % TERM
    cens = rng.random(n) < 0.2
    # keep events untied: first event per month only
    for m in range(TERM):
        ev = np.flatnonzero((tau == m) & ~cens)
        cens[ev[1:]] = True
    tab = random_table(n, rng, tau=tau, censored=cens)
    model = cox.fit(random_table(300, rng), SMALL, compute_concordance=False, robust=False)
    model = dataclasses.replace(model, beta=rng.normal(scale=0.3, size=len(model.beta)))
    rep = dg.schoenfeld(model, tab)
    risk = cox.RiskData.from_survival(model.design, encode_survival(tab))
    rows = episode_rows(risk.X, risk.last, risk.event, risk.F, risk.S)
    expect = []
    for m in sorted(set(risk.last[risk.event])):
        rs = [z for (mm, _, z) in rows if mm == m]
        dead = [z for (mm, e, z) in rows if mm == m and e][0]
        w = np.array([np.exp(z @ model.beta) for z in rs])
        expect.append(dead - (w @ np.array(rs)) / w.sum())
    np.testing.assert_allclose(rep.residuals, np.array(expect), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_residuals_sum_to_zero(seed):
    model, tab = fitted(300, seed)
    rep = dg.schoenfeld(model, tab)
    assert np.abs(rep.residuals.sum(axis=0)).max() <= 1e-8 * len(rep.residuals)
    np.testing.assert_allclose(rep.scaled.mean(axis=0), model.beta, atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_score_test_matches_augmented_model(seed):
    """Chi-square equals the score test for x*(t - tbar) built by brute force."""
    model, tab = fitted(25, 100 + seed, NO_TIME)
    rep = dg.schoenfeld(model, tab)
    risk = cox.RiskData.from_survival(model.design, encode_survival(tab))
    rows = episode_rows(risk.X, risk.last, risk.event, risk.F, risk.S)
    ev_m = risk.last[risk.event]
    tbar = ev_m.mean()
    aug = [(m, e, np.concatenate([z, z * (m - tbar)])) for (m, e, z) in rows]
    P = len(model.beta)
    theta0 = np.concatenate([model.beta, np.zeros(P)])
    h = 1e-4

    def ll(v):
        return efron_loglik(aug, v)

    grad = np.zeros(2 * P)
    hess = np.zeros((2 * P, 2 * P))
    for j in range(2 * P):
        e = np.zeros(2 * P)
        e[j] = h
        grad[j] = (ll(theta0 + e) - ll(theta0 - e)) / (2 * h)
        for k in range(j, 2 * P):
            f = np.zeros(2 * P)
            f[k] = h
            hess[j, k] = hess[k, j] = (ll(theta0 + e + f) - ll(theta0 + e - f) - ll(theta0 - e + f)
                                       + ll(theta0 - e - f)) / (4 * h * h)
    info = -hess
    for name, idx in rep.blocks.items():
        keep = np.concatenate([np.arange(P), P + idx])
        I = info[np.ix_(keep, keep)]
        U = np.concatenate([np.zeros(P), grad[P + idx]])
        stat = U @ np.linalg.solve(I, U)
        assert rep.chisq[name] == pytest.approx(stat, rel=2e-4, abs=1e-6)
        assert rep.df[name] == len(idx)


def test_single_event_time_rejected():
    tau = np.array([3, 3, 3, 12, 12])
    cens = np.array([False, False, False, True, True])
    tab = random_table(5, np.random.default_rng(1), tau=tau, censored=cens)
    model, _ = fitted(200, 0, ONE)
    with pytest.raises(dg.DiagnosticsError, match="residuals undefined"):
        dg.schoenfeld(model, tab)


def test_report_table_and_panels():
    model, tab = fitted(400, 3)
    rep = dg.schoenfeld(model, tab)
    table = rep.table()
    assert [r["covariate"] for r in table] == list(rep.blocks) + ["GLOBAL"]
    assert all(0 <= r["p_value"] <= 1 for r in table)
    # male * t is spanned by the fitted male * ns(t) terms, leaving one direction untestable
    assert rep.global_df == len(model.beta) - 1
    assert rep.df["male"] == len(rep.blocks["male"]) - 1
    assert rep.df["married"] == 1
    rows = rep.panel_rows()
    assert {r["kind"] for r in rows} == {"residual", "smooth"}
    sm = rep.smooth["married"]
    assert np.all(sm.lower <= sm.fit) and np.all(sm.fit <= sm.upper)


def test_local_linear_reproduces_lines():
    x = np.repeat(np.arange(12.0), 5)
    y = 0.3 - 0.05 * x
    curve = dg.local_linear(x, y, np.linspace(0, 11, 23), bandwidth=2.2)
    np.testing.assert_allclose(curve.fit, 0.3 - 0.05 * curve.time, atol=1e-10)
    np.testing.assert_allclose(curve.upper - curve.lower, 0.0, atol=1e-10)


def test_ph_null_and_sign_flip_small():
    """Small-scale version of the calibration: null p-values are not
    concentrated near zero and a sign-flipping effect is detected."""
    p_null, p_alt = [], []
    for r in range(20):
        tab, _ = sy.generate(ph_market(3000, 40 + r))
        rep = dg.schoenfeld(cox.fit(tab, LINEAR, compute_concordance=False, robust=False), tab)
        p_null.append(rep.p_value["married"])
        tab, _ = sy.generate(ph_market(3000, 80 + r, flip=True))
        rep = dg.schoenfeld(cox.fit(tab, LINEAR, compute_concordance=False, robust=False), tab)
        p_alt.append(rep.p_value["male"])
    assert np.mean(np.array(p_null) < 0.05) <= 0.25
    assert stats.kstest(p_null, "uniform").pvalue > 0.001
    assert np.mean(np.array(p_alt) < 0.01) >= 0.9


def test_deterministic():
    model, tab = fitted(300, 9)
    a, b = dg.schoenfeld(model, tab), dg.schoenfeld(model, tab)
    assert a.chisq == b.chisq
    np.testing.assert_array_equal(a.scaled, b.scaled)


# Cox-Snell ----------------------------------------------------------------------


def test_nelson_aalen_hand():
    t, c = dg.nelson_aalen([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
    np.testing.assert_allclose(t, [1, 2, 3, 4])
    np.testing.assert_allclose(c, np.cumsum([1 / 5, 1 / 4, 1 / 2, 0]))


def test_cox_snell_nonnegative_and_relabel_invariant():
    model, tab = fitted(500, 4)
    rep = dg.cox_snell(model, tab)
    assert np.all(rep.residual >= 0)
    perm = np.random.default_rng(0).permutation(len(tab))
    shuffled = tab.take(perm)
    shuffled = type(shuffled)([f"X{i}" for i in range(len(tab))], shuffled.male, shuffled.funded,
                              shuffled.payments, shuffled.columns)
    rep2 = dg.cox_snell(model, shuffled)
    np.testing.assert_allclose(rep2.residual, rep.residual[perm], atol=1e-15)
    assert rep2.max_deviation == rep.max_deviation


def test_cox_snell_constant_hazard():
    model, tab = fitted(500, 5, ONE)
    model = dataclasses.replace(model, beta=np.zeros_like(model.beta), baseline=np.full(TERM, 0.05))
    rep = dg.cox_snell(model, tab)
    assert len(np.unique(rep.residual)) <= TERM + 1
    sd = encode_survival(tab)
    upto = np.where(sd.censored, sd.tau, sd.tau + 1)
    np.testing.assert_allclose(rep.residual, 0.05 * upto, atol=1e-12)


def test_cox_snell_correct_model_close_to_diagonal():
    tab, _ = sy.generate(ph_market(10_000, 7))
    model = cox.fit(tab, LINEAR, compute_concordance=False, robust=False)
    assert dg.cox_snell(model, tab).max_deviation <= 0.05


def test_cox_snell_misspecified_deviates_more():
    """Reversed covariate effects, with the baseline refit, pull the plot off the diagonal."""
    wins = 0
    reps = 10
    for r in range(reps):
        tab, _ = sy.generate(ph_market(10_000, 200 + r))
        good = cox.fit(tab, LINEAR, compute_concordance=False, robust=False)
        risk = cox.RiskData.from_survival(good.design, encode_survival(tab))
        flipped = -good.beta
        bad = dataclasses.replace(good, beta=flipped, baseline=cox.breslow_baseline(risk, flipped))
        wins += dg.cox_snell(bad, tab).max_deviation > 2 * dg.cox_snell(good, tab).max_deviation
    assert wins == reps


def test_cox_snell_blind_to_intercept_only():
    """At beta = 0 the residuals are the Nelson-Aalen estimate itself, so the
    plot is exactly diagonal however heterogeneous the data."""
    tab, _ = sy.generate(ph_market(5000, 3))
    good = cox.fit(tab, LINEAR, compute_concordance=False, robust=False)
    zero = np.zeros_like(good.beta)
    risk = cox.RiskData.from_survival(good.design, encode_survival(tab))
    bad = dataclasses.replace(good, beta=zero, baseline=cox.breslow_baseline(risk, zero))
    assert dg.cox_snell(bad, tab).max_deviation <= 1e-12


# ranks --------------------------------------------------------------------------


def test_rank_uninformative_is_half():
    model, tab = fitted(2000, 6, ONE)
    model = dataclasses.replace(model, beta=np.zeros_like(model.beta))
    rep = dg.default_rank(model, tab)
    np.testing.assert_allclose(rep.mean, 0.5)
    assert rep.count.sum() == (~encode_survival(tab).censored).sum()


def test_rank_hand_case():
    tau = np.array([0, 0, 1, 12])
    cens = np.array([False, True, False, True])
    tab = random_table(4, np.random.default_rng(2), tau=tau, censored=cens)
    tab = tab.with_columns(married=np.array([1, 0, 0, 1]))
    model, _ = fitted(200, 0, ONE)
    model = dataclasses.replace(model, beta=np.array([1.0]), baseline=np.full(TERM, 0.01))
    rep = dg.default_rank(model, tab)
    # month 0: loans 0, 2, 3 at risk (loan 1, censored at tau=0, never is);
    # loan 0 has hazard e, ties with loan 3, above loan 2
    np.testing.assert_array_equal(rep.months, [0, 1])
    assert rep.rank[0] == pytest.approx((1 + 0.5) / 2)
    # month 1: loans 2 and 3 at risk, loan 2 below loan 3
    assert rep.rank[1] == pytest.approx(0.0)


def test_rank_grows_with_separation():
    means = []
    for k in (0.5, 1.0, 3.0):
        spec = ph_market(5000, 11)
        hz = dataclasses.replace(spec.hazard, coef={c: k * v for c, v in spec.hazard.coef.items()})
        tab, _ = sy.generate(dataclasses.replace(spec, hazard=hz))
        model = cox.fit(tab, LINEAR, compute_concordance=False, robust=False)
        means.append(dg.default_rank(model, tab).mean.mean())
    assert means[0] > 0.5
    assert means[0] < means[1] < means[2]


def test_hazard_curve_rows():
    model, _ = fitted(400, 8)
    rows = dg.hazard_curve(model)
    assert len(rows) == TERM
    assert {"month", "baseline_hazard", "male_coef", "male_lower", "male_upper"} <= set(rows[0])
    assert rows[0]["male_coef"] == pytest.approx(model.coef("male"))
