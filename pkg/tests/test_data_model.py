from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2pdi.data_model import (
    ABSENT, DEFAULTED, PAID, PARTIAL, TERM, UNOBSERVED, CensoredOutcomeError, DataError, LoanRecord,
    LoanTable, PaymentStatus, derive_outcome, encode_survival, indicator_matrix,
    payments_for_default_time, preprocess,
)

from conftest import random_table


def record(payments=None, rate=0.2, funded=True, **kw):
    base = dict(id="a", gender="f", married=1, age=30.0, repeated=0, employment=2, education=1,
                past_failed=0.0, past_aborted=0.0, past_ontime=3.0, past_late=1.0, amount=3.0,
                rate=rate, app=0, express=0, province=1, funded=funded, payments=payments)
    base.update(kw)
    return LoanRecord(**base)


def pays(s):
    return tuple(PaymentStatus(c) for c in s)


# outcomes -----------------------------------------------------------------------


def test_all_paid():
    out = derive_outcome(record(pays("P" * 12), rate=0.20))
    assert out.default_time == 12
    assert out.repayment_ratio == 1
    assert out.return_rate == pytest.approx(1.20, abs=1e-15)


def test_default_first_month():
    out = derive_outcome(record(pays("D" * 12), rate=0.30))
    assert (out.default_time, out.repayment_ratio, out.return_rate) == (0, 0, 0.0)


def test_default_after_six():
    out = derive_outcome(record(pays("P" * 6 + "D" * 6), rate=0.16))
    assert out.default_time == 6
    assert out.repayment_ratio == Fraction(1, 2)
    assert out.return_rate == pytest.approx(0.58, abs=1e-15)


def test_censored_outcome_undefined():
    with pytest.raises(CensoredOutcomeError, match="right-censored"):
        derive_outcome(record(pays("P" * 5 + "U" * 7)))


def test_default_before_cutoff_is_known():
    out = derive_outcome(record(pays("PP" + "D" * 3 + "U" * 7)))
    assert out.default_time == 2


@pytest.mark.parametrize("T", range(TERM + 1))
def test_round_trip_default_time(T):
    out = derive_outcome(record(payments_for_default_time(T), rate=0.25))
    assert out.default_time == T
    assert out.return_rate / 1.25 == pytest.approx(float(out.repayment_ratio), abs=1e-12)


@given(T=st.integers(0, TERM), rate=st.floats(0.16, 0.36))
def test_return_rate_decomposition(T, rate):
    out = derive_outcome(record(payments_for_default_time(T), rate=rate))
    assert out.repayment_ratio == Fraction(min(T, TERM), TERM)
    assert abs(out.return_rate / (1 + rate) - float(out.repayment_ratio)) <= 1e-12
    assert 0 <= out.return_rate <= 1 + rate


def test_record_invariants():
    with pytest.raises(DataError):
        record(None, funded=True)
    with pytest.raises(DataError):
        record(pays("P" * 12), funded=False)
    with pytest.raises(DataError):
        record(pays("P" * 12), gender="x")
    with pytest.raises(ValueError):
        derive_outcome(record(None, funded=False))


# preprocessing ------------------------------------------------------------------


def _table_from(recs):
    return LoanTable.from_records(recs)


def test_pay_after_default_dropped():
    recs = [record(pays("P" * 12), id="ok"), record(pays("PPDP" + "D" * 8), id="bad")]
    out, rep = preprocess(recs, winsor_quantile=0)
    assert list(out.ids) == ["ok"]
    assert rep.pay_after_default == 1
    assert rep.output_count == 1


def test_partial_payment_dropped():
    recs = [record(pays("P" * 12), id="ok"), record(pays("PX" + "P" * 10), id="bad")]
    out, rep = preprocess(recs, winsor_quantile=0)
    assert rep.partial_payment == 1 and list(out.ids) == ["ok"]


def test_rate_floor_count(rng):
    tab = random_table(100, rng)
    rate = tab.rate.copy()
    rate[:10] = 0.10
    rate[10:] = np.maximum(rate[10:], 0.16)
    out, rep = preprocess(tab.with_columns(rate=rate), winsor_quantile=0, rate_floor=0.16)
    assert len(out) == 90
    assert rep.below_rate_floor == 10
    assert out.rate.min() >= 0.16


def test_winsor_zero_is_identity(rng):
    tab = random_table(200, rng)
    tab = tab.with_columns(rate=np.maximum(tab.rate, 0.16))
    out, _ = preprocess(tab, winsor_quantile=0)
    for k, v in tab.columns.items():
        np.testing.assert_array_equal(out[k], v)


def test_winsor_clamps_to_quantiles(rng):
    tab = random_table(1000, rng)
    out, rep = preprocess(tab, winsor_quantile=0.01)
    x = tab["amount"]
    assert out["amount"].min() == np.quantile(x, 0.01, method="lower")
    assert out["amount"].max() == np.quantile(x, 0.99, method="higher")
    assert len(out) == len(tab)
    assert rep.winsor_clamped["amount"] > 0
    np.testing.assert_array_equal(out["rate"], tab["rate"])


def test_winsor_drop_mode(rng):
    tab = random_table(1000, rng)
    out, rep = preprocess(tab, winsor_quantile=0.01, mode="drop")
    assert len(out) == rep.output_count < len(tab)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), q=st.sampled_from([0.0, 0.005, 0.02, 0.05]))
def test_preprocess_idempotent(seed, q):
    tab = random_table(150, np.random.default_rng(seed))
    once, _ = preprocess(tab, winsor_quantile=q)
    twice, rep = preprocess(once, winsor_quantile=q)
    assert len(twice) == len(once) == rep.output_count
    for k in once.columns:
        np.testing.assert_array_equal(once[k], twice[k])


def test_preprocess_errors(rng):
    with pytest.raises(DataError, match="no records"):
        preprocess([])
    with pytest.raises(ValueError):
        preprocess(random_table(5, rng), winsor_quantile=0.2)


# survival encoding --------------------------------------------------------------


def test_encoding_examples():
    recs = [record(pays("P" * 12), id="full"), record(pays("PPP" + "D" * 9), id="d3"),
            record(pays("P" * 5 + "U" * 7), id="cut"), record(pays("P" * 4 + "U" + "P" * 7), id="gap")]
    sd = encode_survival(recs)
    np.testing.assert_array_equal(sd.tau, [12, 3, 5, 4])
    np.testing.assert_array_equal(sd.censored, [True, False, True, True])
    samples = sd.samples()
    assert samples[1].observation_time == 3 and not samples[1].censored
    assert samples[0].gender == "f"


def test_encoding_rejects_unfunded(rng):
    with pytest.raises(DataError):
        encode_survival(random_table(5, rng, funded=False))


def test_reference_cell_dummies(rng):
    tab = random_table(50, rng)
    X, names = indicator_matrix(tab)
    assert "employment:0" not in names and "employment:1" in names
    j = names.index("employment:2")
    np.testing.assert_array_equal(X[:, j], tab["employment"] == 2)


# CSV ----------------------------------------------------------------------------


def test_csv_round_trip(tmp_path, rng):
    tab = random_table(30, rng)
    half = random_table(10, rng, funded=False)
    both = LoanTable(list(tab.ids) + [f"U{i}" for i in range(10)], np.r_[tab.male, half.male],
                     np.r_[tab.funded, half.funded], np.vstack([tab.payments, half.payments]),
                     {k: np.r_[tab[k], half[k]] for k in tab.columns})
    for k in ("married", "repeated", "app", "express", "employment", "education", "province"):
        both = both.with_columns(**{k: np.round(both[k])})
    p = tmp_path / "loans.csv"
    both.write_csv(p)
    back = LoanTable.read_csv(p)
    assert list(back.ids) == list(both.ids)
    np.testing.assert_array_equal(back.payments, both.payments)
    for k in both.columns:
        np.testing.assert_array_equal(back[k], both[k])
    both.write_csv(tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == p.read_bytes()


@pytest.mark.parametrize("mutate, where", [
    (lambda row: row.__setitem__(3, "abc"), "column age"),
    (lambda row: row.__setitem__(1, "x"), "column gender"),
    (lambda row: row.__setitem__(17, "Q"), "column m0"),
    (lambda row: row.__setitem__(16, "2"), "column funded"),
])
def test_csv_errors_name_row_and_column(tmp_path, rng, mutate, where):
    p = tmp_path / "loans.csv"
    random_table(3, rng).write_csv(p)
    lines = p.read_text().splitlines()
    row = lines[2].split(",")
    mutate(row)
    lines[2] = ",".join(row)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=f"row 3, {where}"):
        LoanTable.read_csv(p)


def test_csv_missing_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,gender\n")
    with pytest.raises(DataError, match="missing columns"):
        LoanTable.read_csv(p)


def test_table_record_round_trip(rng):
    tab = random_table(20, rng)
    tab = tab.with_columns(**{k: np.round(tab[k]) for k in ("married", "employment")})
    back = LoanTable.from_records(tab.records())
    np.testing.assert_array_equal(back.payments, tab.payments)
    assert set(np.unique(back.payments)) <= {PAID, DEFAULTED, UNOBSERVED, ABSENT}
    assert PARTIAL not in back.payments
