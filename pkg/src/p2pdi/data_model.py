"""Loan records, repayment outcomes, preprocessing and survival encoding.

Loans have a fixed 12-month term.  A funded loan carries one status per
month: paid, defaulted or unobserved (data cut-off).  Raw platform data may
also contain partially paid installments, which preprocessing removes.

Two representations are kept side by side: :class:`LoanRecord` for
record-level work and :class:`LoanTable`, a columnar view used by every
bulk computation.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TERM = 12
NO_DEFAULT = TERM  # default_time value meaning "no default within the term"


class DataError(ValueError):
    """Malformed or inconsistent loan data."""


class CensoredOutcomeError(ValueError):
    """The payment history is right-censored, so the outcome is undefined."""


class PaymentStatus(str, enum.Enum):
    PAID = "P"
    DEFAULTED = "D"
    UNOBSERVED = "U"
    PARTIAL = "X"  # raw data only; dropped by preprocess


# integer codes used in LoanTable.payments
ABSENT, PAID, DEFAULTED, UNOBSERVED, PARTIAL = -1, 0, 1, 2, 3
_CODE = {"P": PAID, "D": DEFAULTED, "U": UNOBSERVED, "X": PARTIAL}
_LETTER = {v: k for k, v in _CODE.items()}

BINARY = ("married", "repeated", "app", "express")
CATEGORICAL = ("employment", "education", "province")
CONTINUOUS = ("age", "past_failed", "past_aborted", "past_ontime", "past_late", "amount", "rate")
WINSORIZED = ("amount", "age", "past_ontime", "past_late", "past_failed", "past_aborted")
NUMERIC_COLUMNS = BINARY + CATEGORICAL + CONTINUOUS

CSV_COLUMNS = (
    ["id", "gender", "married", "age", "repeated", "employment", "education",
     "past_failed", "past_aborted", "past_ontime", "past_late", "amount", "rate",
     "app", "express", "province", "funded"]
    + [f"m{k}" for k in range(TERM)]
)
_INT_COLUMNS = {"married", "repeated", "employment", "education", "app", "express", "province"}


@dataclass(frozen=True)
class LoanRecord:
    id: str
    gender: str
    married: int
    age: float
    repeated: int
    employment: int
    education: int
    past_failed: float
    past_aborted: float
    past_ontime: float
    past_late: float
    amount: float
    rate: float
    app: int
    express: int
    province: int
    funded: bool
    payments: tuple[PaymentStatus, ...] | None = None

    def __post_init__(self):
        if self.gender not in ("m", "f"):
            raise DataError(f"loan {self.id}: gender must be 'm' or 'f', got {self.gender!r}")
        if self.funded != (self.payments is not None):
            raise DataError(f"loan {self.id}: payments must be present iff the loan is funded")
        if self.payments is not None:
            if len(self.payments) != TERM:
                raise DataError(f"loan {self.id}: expected {TERM} monthly statuses")
            object.__setattr__(self, "payments", tuple(PaymentStatus(p) for p in self.payments))


@dataclass(frozen=True)
class RepaymentOutcome:
    """Default time ``T`` (12 means 12+), repayment ratio and return rate."""

    default_time: int
    repayment_ratio: Fraction
    return_rate: float

    @classmethod
    def from_default_time(cls, T: int, rate: float) -> "RepaymentOutcome":
        lam = Fraction(min(int(T), TERM), TERM)
        return cls(int(T), lam, float(lam) * (1.0 + rate))


@dataclass(frozen=True)
class SurvivalSample:
    covariates: tuple[float, ...]
    observation_time: int
    censored: bool
    gender: str


def _history(codes: Sequence[int]) -> tuple[int, int]:
    """Index of the first default and of the first unobserved month (12 if none)."""
    codes = list(codes)
    first_d = codes.index(DEFAULTED) if DEFAULTED in codes else TERM
    first_u = codes.index(UNOBSERVED) if UNOBSERVED in codes else TERM
    return first_d, first_u


def derive_outcome(record: LoanRecord) -> RepaymentOutcome:
    """Repayment outcome of a funded loan with a complete payment history.

    A history that is cut off before any default is right-censored and has no
    outcome; a default observed before the cut-off fixes the outcome.
    """
    if not record.funded:
        raise ValueError(f"loan {record.id} is unfunded; outcome undefined")
    first_d, first_u = _history([_CODE[p.value] for p in record.payments])
    if first_u < TERM and first_u <= first_d:
        raise CensoredOutcomeError(
            f"loan {record.id}: right-censored; outcome undefined, use survival encoding")
    return RepaymentOutcome.from_default_time(first_d, record.rate)


def payments_for_default_time(T: int, censor_at: int | None = None) -> tuple[PaymentStatus, ...]:
    """Canonical payment history for default time ``T`` (12 = no default)."""
    out = []
    for k in range(TERM):
        if censor_at is not None and k >= censor_at:
            out.append(PaymentStatus.UNOBSERVED)
        elif k < T:
            out.append(PaymentStatus.PAID)
        else:
            out.append(PaymentStatus.DEFAULTED)
    return tuple(out)


class LoanTable:
    """Columnar loan data.

    ``male`` (int8), ``funded`` (bool), numeric covariates (float64) and the
    ``payments`` matrix of integer status codes, ``ABSENT`` for unfunded loans.
    """

    def __init__(self, ids, male, funded, payments, columns: dict[str, np.ndarray]):
        self.ids = np.asarray(ids, dtype=object)
        self.male = np.asarray(male, dtype=np.int8)
        self.funded = np.asarray(funded, dtype=bool)
        self.payments = np.asarray(payments, dtype=np.int8).reshape(len(self.ids), TERM)
        self.columns = {k: np.asarray(columns[k], dtype=float) for k in NUMERIC_COLUMNS}
        n = len(self.ids)
        for name, arr in [("male", self.male), ("funded", self.funded)] + list(self.columns.items()):
            if arr.shape != (n,):
                raise DataError(f"column {name} has shape {arr.shape}, expected ({n},)")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "male":
            return self.male
        if name == "funded":
            return self.funded
        return self.columns[name]

    @property
    def rate(self) -> np.ndarray:
        return self.columns["rate"]

    def take(self, idx) -> "LoanTable":
        idx = np.asarray(idx)
        return LoanTable(self.ids[idx], self.male[idx], self.funded[idx], self.payments[idx],
                         {k: v[idx] for k, v in self.columns.items()})

    def with_columns(self, **cols) -> "LoanTable":
        new = dict(self.columns)
        new.update({k: np.asarray(v, dtype=float) for k, v in cols.items()})
        return LoanTable(self.ids, self.male, self.funded, self.payments, new)

    @classmethod
    def from_records(cls, records: Iterable[LoanRecord]) -> "LoanTable":
        records = list(records)
        pay = np.full((len(records), TERM), ABSENT, dtype=np.int8)
        for i, r in enumerate(records):
            if r.payments is not None:
                pay[i] = [_CODE[p.value] for p in r.payments]
        cols = {k: np.array([getattr(r, k) for r in records], dtype=float) for k in NUMERIC_COLUMNS}
        return cls([r.id for r in records], [r.gender == "m" for r in records],
                   [r.funded for r in records], pay, cols)

    def records(self) -> list[LoanRecord]:
        out = []
        for i in range(len(self)):
            kw = {}
            for k in NUMERIC_COLUMNS:
                v = self.columns[k][i]
                kw[k] = int(v) if k in _INT_COLUMNS else float(v)
            pay = None
            if self.funded[i]:
                pay = tuple(PaymentStatus(_LETTER[int(c)]) for c in self.payments[i])
            out.append(LoanRecord(id=str(self.ids[i]), gender="m" if self.male[i] else "f",
                                  funded=bool(self.funded[i]), payments=pay, **kw))
        return out

    # --- derived quantities -------------------------------------------------

    def history(self) -> tuple[np.ndarray, np.ndarray]:
        """First-default and first-unobserved month per loan (12 when absent)."""
        pay = self.payments
        is_d = pay == DEFAULTED
        is_u = (pay == UNOBSERVED) | (pay == ABSENT)
        first_d = np.where(is_d.any(axis=1), is_d.argmax(axis=1), TERM)
        first_u = np.where(is_u.any(axis=1), is_u.argmax(axis=1), TERM)
        return first_d, first_u

    def observation(self) -> tuple[np.ndarray, np.ndarray]:
        """Survival encoding ``(tau, censored)``; only meaningful for funded loans."""
        first_d, first_u = self.history()
        event = first_d < first_u
        tau = np.where(event, first_d, np.minimum(first_u, TERM))
        return tau.astype(np.int64), ~event

    def observed_repayment(self) -> tuple[np.ndarray, np.ndarray]:
        """Repayment ratio where the outcome is known, plus a mask of known outcomes."""
        tau, censored = self.observation()
        known = self.funded & ((~censored) | (tau == TERM))
        lam = np.where(known, np.minimum(tau, TERM) / TERM, np.nan)
        return lam, known

    # --- CSV ----------------------------------------------------------------

    @classmethod
    def read_csv(cls, path) -> "LoanTable":
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file, header required") from None
            missing = [c for c in CSV_COLUMNS if c not in header]
            if missing:
                raise DataError(f"{path}: missing columns {missing}")
            pos = {c: header.index(c) for c in CSV_COLUMNS}
            ids, male, funded, pays = [], [], [], []
            cols = {k: [] for k in NUMERIC_COLUMNS}
            for rowno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) < len(header):
                    raise DataError(f"{path}: row {rowno}: expected {len(header)} fields, got {len(row)}")

                def cell(c):
                    return row[pos[c]].strip()

                ids.append(cell("id"))
                g = cell("gender")
                if g not in ("m", "f"):
                    raise DataError(f"{path}: row {rowno}, column gender: expected m or f, got {g!r}")
                male.append(g == "m")
                for k in NUMERIC_COLUMNS:
                    try:
                        cols[k].append(float(cell(k)))
                    except ValueError:
                        raise DataError(f"{path}: row {rowno}, column {k}: not a number: {cell(k)!r}") from None
                f = cell("funded")
                if f not in ("0", "1"):
                    raise DataError(f"{path}: row {rowno}, column funded: expected 0 or 1, got {f!r}")
                funded.append(f == "1")
                p = []
                for k in range(TERM):
                    s = cell(f"m{k}")
                    if f == "1":
                        if s not in _CODE:
                            raise DataError(f"{path}: row {rowno}, column m{k}: expected P, D or U, got {s!r}")
                        p.append(_CODE[s])
                    else:
                        if s:
                            raise DataError(f"{path}: row {rowno}, column m{k}: unfunded loans carry no payments")
                        p.append(ABSENT)
                pays.append(p)
        if not ids:
            raise DataError(f"{path}: no records")
        return cls(ids, male, funded, np.array(pays, dtype=np.int8).reshape(-1, TERM), cols)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i in range(len(self)):
                row = [self.ids[i], "m" if self.male[i] else "f"]
                for k in CSV_COLUMNS[2:16]:
                    v = self.columns[k][i]
                    row.append(str(int(v)) if k in _INT_COLUMNS else repr(float(v)))
                row.append("1" if self.funded[i] else "0")
                if self.funded[i]:
                    row.extend(_LETTER[int(c)] for c in self.payments[i])
                else:
                    row.extend([""] * TERM)
                w.writerow(row)


@dataclass
class DropReport:
    input_count: int
    partial_payment: int = 0
    pay_after_default: int = 0
    below_rate_floor: int = 0
    winsor_dropped: int = 0
    winsor_clamped: dict[str, int] = field(default_factory=dict)

    @property
    def output_count(self) -> int:
        return (self.input_count - self.partial_payment - self.pay_after_default
                - self.below_rate_floor - self.winsor_dropped)


def _as_table(loans) -> LoanTable:
    if isinstance(loans, LoanTable):
        return loans
    return LoanTable.from_records(loans)


def preprocess(loans, winsor_quantile: float = 0.005, rate_floor: float = 0.16,
               mode: str = "clamp") -> tuple[LoanTable, DropReport]:
    """Drop non-conventional payment histories and low-rate loans, winsorize covariates.

    Order: structural drops, then the rate floor, then winsorization, so that
    quantiles are taken on the final sample.  With ``mode="clamp"`` the lower
    and upper cut points are actual data values (``lower``/``higher`` quantile
    methods), which makes the whole operation idempotent.
    """
    table = _as_table(loans)
    if len(table) == 0:
        raise DataError("no records")
    if not 0.0 <= winsor_quantile <= 0.05:
        raise ValueError("winsor_quantile must lie in [0, 0.05]")
    if not 0.0 <= rate_floor < 1.0:
        raise ValueError("rate_floor must lie in [0, 1)")
    if mode not in ("clamp", "drop"):
        raise ValueError("mode must be 'clamp' or 'drop'")
    report = DropReport(input_count=len(table))

    pay = table.payments
    partial = (pay == PARTIAL).any(axis=1)
    first_d, _ = table.history()
    after = np.arange(TERM)[None, :] > first_d[:, None]
    pay_after = ((pay == PAID) & after).any(axis=1) & ~partial
    report.partial_payment = int(partial.sum())
    report.pay_after_default = int(pay_after.sum())
    table = table.take(np.flatnonzero(~partial & ~pay_after))

    low = table.rate < rate_floor
    report.below_rate_floor = int(low.sum())
    table = table.take(np.flatnonzero(~low))
    if len(table) == 0 or winsor_quantile == 0:
        return table, report

    new_cols = {}
    keep = np.ones(len(table), dtype=bool)
    for name in WINSORIZED:
        x = table[name]
        lo = np.quantile(x, winsor_quantile, method="lower")
        hi = np.quantile(x, 1.0 - winsor_quantile, method="higher")
        outside = (x < lo) | (x > hi)
        report.winsor_clamped[name] = int(outside.sum())
        if mode == "clamp":
            new_cols[name] = np.clip(x, lo, hi)
        else:
            keep &= ~outside
    if mode == "clamp":
        table = table.with_columns(**new_cols)
    else:
        report.winsor_dropped = int((~keep).sum())
        table = table.take(np.flatnonzero(keep))
    return table, report


@dataclass(frozen=True)
class SurvivalData:
    """Funded loans in survival form: covariates, observation time and censoring."""

    table: LoanTable
    tau: np.ndarray
    censored: np.ndarray

    @property
    def events(self) -> np.ndarray:
        return ~self.censored

    def take(self, idx) -> "SurvivalData":
        return SurvivalData(self.table.take(idx), self.tau[idx], self.censored[idx])

    def samples(self, levels: dict[str, Sequence[int]] | None = None) -> list[SurvivalSample]:
        """Record view with reference-cell dummies (category 0 is the reference)."""
        X, _ = indicator_matrix(self.table, levels)
        sexes = np.where(self.table.male == 1, "m", "f")
        return [SurvivalSample(tuple(X[i]), int(self.tau[i]), bool(self.censored[i]), str(sexes[i]))
                for i in range(len(self.tau))]


def indicator_matrix(table: LoanTable, levels: dict[str, Sequence[int]] | None = None):
    """Raw covariates with categoricals expanded to indicator columns."""
    levels = levels or {c: sorted(set(np.unique(table[c]).astype(int)) - {0}) for c in CATEGORICAL}
    cols, names = [table.male.astype(float)], ["male"]
    for b in BINARY:
        cols.append(table[b])
        names.append(b)
    for c in CATEGORICAL:
        for lev in levels[c]:
            cols.append((table[c] == lev).astype(float))
            names.append(f"{c}:{lev}")
    for c in CONTINUOUS:
        cols.append(table[c])
        names.append(c)
    return np.column_stack(cols), names


def encode_survival(loans) -> SurvivalData:
    """Survival encoding of funded loans.

    Non-defaulted loans observed for the full term get ``tau=12`` and are
    censored; defaulted loans get ``tau=T`` and are events; histories cut off
    early are censored at the last contiguous observed month.
    """
    table = _as_table(loans)
    if not table.funded.all():
        raise DataError("encode_survival expects funded loans only")
    if (table.payments == PARTIAL).any():
        raise DataError("partially paid installments present; run preprocess first")
    tau, censored = table.observation()
    return SurvivalData(table, tau, censored)
