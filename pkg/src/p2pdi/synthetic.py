"""Synthetic loan markets with known ground truth.

Repayment follows either a discrete-time hazard process of the same form as
the fitted model (``repayment="hazard"``) or a Gaussian repayment ratio
(``repayment="gaussian"``).  Funding follows the signal-threshold decision
rule: an investor sees ``signal = base + sigma1 * eps`` and funds when
``((1 - gamma) mu + gamma signal) (1 + R) >= pi``.  ``base`` is the realized
repayment ratio (``signal="realized"``) or its expectation given the
observed covariates (``signal="expected"``).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng as rngmod
from . import splines
from .data_model import (ABSENT, BINARY, CATEGORICAL, CONTINUOUS, DEFAULTED, NUMERIC_COLUMNS, PAID, TERM,
                         UNOBSERVED, LoanTable)

GENDERS = ("f", "m")
RATE_GRID = np.round(np.arange(0.16, 0.36 + 1e-9, 0.01), 2)
TIME_SPEC = splines.make_spec(np.arange(TERM), 3, center=0.0)
# products such as (11/12) * 1.2 land a rounding error below 1.1; the same slack the
# return-rate bins use keeps the decision rule and the binning consistent
FUNDING_TOL = 1e-9


def signal_reliability(sigma0: float, sigma1: float) -> float:
    """Weight on the individual signal: ``s1^-2 / (s0^-2 + s1^-2)``."""
    if sigma1 == 0:
        return 1.0
    if sigma0 == 0:
        return 0.0
    return sigma1 ** -2 / (sigma0 ** -2 + sigma1 ** -2)


@dataclass(frozen=True)
class GroupCovariates:
    """Covariate distribution for one gender."""

    married: float = 0.5
    repeated: float = 0.5
    app: float = 0.2
    express: float = 0.02
    employment: tuple = (0.27, 0.04, 0.49, 0.19, 0.01)
    education: tuple = (0.74, 0.01, 0.16, 0.08, 0.01)
    province: tuple = (0.4, 0.2, 0.2, 0.2)
    age_mean: float = 28.0
    age_sd: float = 6.0
    past_failed: float = 0.27
    past_aborted: float = 0.37
    past_ontime: float = 3.7
    past_late: float = 0.85
    count_shape: float = 1.0  # negative-binomial shape for the four counts
    amount_mean: float = 3.4
    amount_sigma: float = 0.6
    rate_mean: float = 0.25


@dataclass(frozen=True)
class HazardSpec:
    """``h(t|x) = h0(t) exp(sum coef (x - center) + x_tv * tv[t] + male ns(t) male_time)``.

    Coefficient keys are covariate names (binary and continuous, entering
    linearly) or ``"employment:2"``-style category levels.  ``varying`` adds
    a per-month coefficient for a covariate (length 12).
    """

    baseline: tuple = (0.02, 0.004, 0.005, 0.005, 0.006, 0.006, 0.007, 0.007, 0.007, 0.005, 0.003, 0.001)
    coef: dict = field(default_factory=dict)
    centers: dict = field(default_factory=dict)
    male_time: tuple = (0.0, 0.0, 0.0)
    varying: dict = field(default_factory=dict)
    continuous_time: bool = False

    def __post_init__(self):
        if len(self.baseline) != TERM:
            raise ValueError("baseline needs 12 monthly values")
        if any(not 0 <= h <= 1 for h in self.baseline):
            raise ValueError("baseline hazards must lie in [0, 1]")
        if len(self.male_time) != TIME_SPEC.degrees_of_freedom:
            raise ValueError(f"male_time needs {TIME_SPEC.degrees_of_freedom} coefficients")
        for k, v in self.varying.items():
            if len(v) != TERM:
                raise ValueError(f"varying[{k}] needs 12 values")


@dataclass(frozen=True)
class DecisionSpec:
    """Per-gender decision parameters.  ``mu``/``sigma0`` of None use the
    generated repayment ratios' moments (the investor knows the market)."""

    pi: dict = field(default_factory=lambda: {"f": 1.099, "m": 1.079})
    sigma1: dict = field(default_factory=lambda: {"f": 0.482, "m": 0.574})
    mu: dict | None = None
    sigma0: dict | None = None
    signal: str = "realized"

    def __post_init__(self):
        if self.signal not in ("realized", "expected"):
            raise ValueError("signal must be 'realized' or 'expected'")
        for name in ("pi", "sigma1", "mu", "sigma0"):
            d = getattr(self, name)
            if d is not None and set(d) != set(GENDERS):
                raise ValueError(f"{name} needs values for both genders")
        if any(v < 0 for v in self.sigma1.values()):
            raise ValueError("sigma1 must be non-negative")


@dataclass(frozen=True)
class MarketSpec:
    n: int
    seed: int
    male_share: float = 0.767
    covariates: dict = field(default_factory=lambda: {"f": GroupCovariates(), "m": GroupCovariates()})
    hazard: HazardSpec = field(default_factory=HazardSpec)
    repayment: str = "hazard"
    gaussian: dict = field(default_factory=lambda: {"mu": {"f": 0.957, "m": 0.934},
                                                    "sigma0": {"f": 0.167, "m": 0.205}})
    gaussian_decision_on: str = "latent"
    decision: DecisionSpec = field(default_factory=DecisionSpec)
    censor_rate: float = 0.025
    chunk_size: int = 50_000
    funding_rule: Callable | None = None

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if not 0 <= self.male_share <= 1:
            raise ValueError("male_share must be in [0, 1]")
        if self.repayment not in ("hazard", "gaussian"):
            raise ValueError("repayment must be 'hazard' or 'gaussian'")
        if self.gaussian_decision_on not in ("latent", "discrete"):
            raise ValueError("gaussian_decision_on must be 'latent' or 'discrete'")
        if not 0 <= self.censor_rate < 1:
            raise ValueError("censor_rate must be in [0, 1)")
        for g in GENDERS:
            c = self.covariates[g]
            for name in ("employment", "education", "province"):
                p = np.asarray(getattr(c, name))
                if (p < 0).any() or abs(p.sum() - 1) > 1e-6:
                    raise ValueError(f"{name} probabilities for {g} must sum to 1")

    def to_dict(self) -> dict:
        if self.funding_rule is not None:
            raise ValueError("a custom funding rule cannot be serialized")
        d = asdict(self)
        d.pop("funding_rule")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarketSpec":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown market spec keys: {sorted(unknown)}")
        if "covariates" in d:
            cov = {}
            for g in GENDERS:
                raw = dict(d["covariates"].get(g, {}))
                for k in ("employment", "education", "province"):
                    if k in raw:
                        raw[k] = tuple(raw[k])
                cov[g] = GroupCovariates(**raw)
            d["covariates"] = cov
        if "hazard" in d:
            h = dict(d["hazard"])
            for k in ("baseline", "male_time"):
                if k in h:
                    h[k] = tuple(h[k])
            if "varying" in h:
                h["varying"] = {k: tuple(v) for k, v in h["varying"].items()}
            d["hazard"] = HazardSpec(**h)
        if "decision" in d:
            d["decision"] = DecisionSpec(**d["decision"])
        return cls(**d)


@dataclass
class GroundTruth:
    """Latent quantities for every generated loan (index-aligned with the table)."""

    default_time: np.ndarray     # 0..11, 12 for no default
    lam: np.ndarray              # repayment ratio in twelfths
    lam_latent: np.ndarray       # unclipped Gaussian draw (equals lam in hazard mode)
    expected_lam: np.ndarray     # E[lambda | X] under the true model
    signal: np.ndarray           # lambda-hat seen by the investor
    expected: np.ndarray         # lambda-tilde, posterior expected repayment
    funded: np.ndarray
    censor_at: np.ndarray        # first unobserved month for funded loans (12 if none)
    male: np.ndarray
    rate: np.ndarray
    hazards: np.ndarray | None   # (n, 12) true hazards in hazard mode
    mu: dict
    sigma0: dict
    gamma: dict

    @property
    def return_rate(self) -> np.ndarray:
        return self.lam * (1 + self.rate)

    def take(self, idx) -> "GroundTruth":
        idx = np.asarray(idx)
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v[idx] if isinstance(v, np.ndarray) else v
        return GroundTruth(**kw)

    def write_csv(self, path, ids) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "gender", "default_time", "lam", "lam_latent", "expected_lam",
                        "signal", "expected", "funded", "censor_at"])
            for i in range(len(self.lam)):
                w.writerow([ids[i], "m" if self.male[i] else "f", int(self.default_time[i]),
                            repr(float(self.lam[i])), repr(float(self.lam_latent[i])),
                            repr(float(self.expected_lam[i])), repr(float(self.signal[i])),
                            repr(float(self.expected[i])), int(self.funded[i]), int(self.censor_at[i])])


# covariates -----------------------------------------------------------------------


def _rate_probs(mean: float) -> np.ndarray:
    """Exponential-tilt distribution on the rate grid with the requested mean."""
    lo, hi = RATE_GRID[0], RATE_GRID[-1]
    if not lo < mean < hi:
        raise ValueError(f"rate mean must be inside ({lo}, {hi})")
    k = np.arange(len(RATE_GRID))

    def mean_for(theta):
        w = np.exp(theta * (k - k.mean()))
        return (w * RATE_GRID).sum() / w.sum()

    a, b = -10.0, 10.0
    for _ in range(200):
        mid = (a + b) / 2
        if mean_for(mid) < mean:
            a = mid
        else:
            b = mid
    w = np.exp((a + b) / 2 * (k - k.mean()))
    return w / w.sum()


def _draw_covariates(spec: MarketSpec, male: np.ndarray, g: np.random.Generator) -> dict:
    n = len(male)
    cols = {k: np.zeros(n) for k in NUMERIC_COLUMNS}
    for gi, gender in enumerate(GENDERS):
        idx = np.flatnonzero(male == gi)
        m = len(idx)
        c: GroupCovariates = spec.covariates[gender]
        for b in BINARY:
            cols[b][idx] = g.random(m) < getattr(c, b)
        for cat in CATEGORICAL:
            p = np.asarray(getattr(c, cat), float)
            cols[cat][idx] = g.choice(len(p), size=m, p=p / p.sum())
        cols["age"][idx] = np.clip(np.round(g.normal(c.age_mean, c.age_sd, m)), 18, 60)
        for cnt in ("past_failed", "past_aborted", "past_ontime", "past_late"):
            mu = getattr(c, cnt)
            lam = g.gamma(c.count_shape, mu / c.count_shape, m) if mu > 0 else np.zeros(m)
            cols[cnt][idx] = g.poisson(lam)
        s = c.amount_sigma
        cols["amount"][idx] = np.round(np.exp(g.normal(math.log(c.amount_mean) - s * s / 2, s, m)), 1)
        cols["rate"][idx] = g.choice(RATE_GRID, size=m, p=_rate_probs(c.rate_mean))
    return cols


# hazard process ---------------------------------------------------------------------


def linear_predictor(hz: HazardSpec, male: np.ndarray, cols: dict) -> np.ndarray:
    """``(n, 12)`` true log relative hazard."""
    n = len(male)
    eta = np.zeros(n)
    for name, b in hz.coef.items():
        if ":" in name:
            cat, lev = name.split(":")
            eta += b * (cols[cat] == int(lev))
        else:
            x = male if name == "male" else cols[name]
            eta += b * (x - hz.centers.get(name, 0.0))
    out = np.repeat(eta[:, None], TERM, axis=1)
    F = splines.evaluate(TIME_SPEC, np.arange(TERM, dtype=float))
    out += male[:, None] * (F @ np.asarray(hz.male_time))[None, :]
    for name, tv in hz.varying.items():
        x = male if name == "male" else cols[name]
        out += np.asarray(x, float)[:, None] * np.asarray(tv)[None, :]
    return out


def true_hazards(hz: HazardSpec, male, cols, multiplier: float = 1.0) -> np.ndarray:
    """Monthly default probabilities.

    By default ``h0 exp(eta)`` is the probability itself (clamped to 1).  With
    ``continuous_time`` it is a hazard rate, constant within each month, and
    the probability of defaulting in the month is ``1 - exp(-h0 exp(eta))``.
    """
    rate = multiplier * np.asarray(hz.baseline)[None, :] * np.exp(linear_predictor(hz, male, cols))
    if hz.continuous_time:
        return -np.expm1(-rate)
    return np.clip(rate, 0, 1)


def default_time_distribution(H: np.ndarray) -> np.ndarray:
    """``(n, 13)`` probabilities of T = 0..11 and of no default (column 12)."""
    surv = np.cumprod(np.hstack([np.ones((len(H), 1)), 1 - H]), axis=1)  # S(0..12)
    P = np.empty((len(H), TERM + 1))
    P[:, :TERM] = surv[:, :TERM] * H
    P[:, TERM] = surv[:, TERM]
    return P


def expected_repayment(H: np.ndarray) -> np.ndarray:
    return default_time_distribution(H) @ (np.arange(TERM + 1) / TERM)


# generation -----------------------------------------------------------------------


_STAGE_COVARIATES, _STAGE_REPAY, _STAGE_FUND, _STAGE_CENSOR = 1, 2, 3, 4


def _chunks(n, size):
    for k, start in enumerate(range(0, n, size)):
        yield k, start, min(n, start + size)


def _repayment(spec: MarketSpec, male, cols, g):
    n = len(male)
    if spec.repayment == "hazard":
        H = true_hazards(spec.hazard, male, cols)
        U = g.random((n, TERM))
        hit = U < H
        T = np.where(hit.any(axis=1), hit.argmax(axis=1), TERM)
        lam = T / TERM
        return T, lam, lam.copy(), expected_repayment(H), H
    mu = np.where(male == 1, spec.gaussian["mu"]["m"], spec.gaussian["mu"]["f"])
    sd = np.where(male == 1, spec.gaussian["sigma0"]["m"], spec.gaussian["sigma0"]["f"])
    latent = g.normal(mu, sd)
    T = np.round(np.clip(latent, 0, 1) * TERM).astype(np.int64)
    return T, T / TERM, latent, mu.astype(float), None


def generate(spec: MarketSpec) -> tuple[LoanTable, GroundTruth]:
    """Draw a market.  Each loan-index chunk has its own random streams."""
    n = spec.n
    male = np.zeros(n, np.int8)
    cols = {k: np.zeros(n) for k in NUMERIC_COLUMNS}
    T = np.zeros(n, np.int64)
    lam = np.zeros(n)
    latent = np.zeros(n)
    elam = np.zeros(n)
    H = np.zeros((n, TERM)) if spec.repayment == "hazard" else None
    for k, a, b in _chunks(n, spec.chunk_size):
        g = rngmod.stream(spec.seed, rngmod.GENERATE, k, _STAGE_COVARIATES)
        male[a:b] = g.random(b - a) < spec.male_share
        c = _draw_covariates(spec, male[a:b], g)
        for name in NUMERIC_COLUMNS:
            cols[name][a:b] = c[name]
        g = rngmod.stream(spec.seed, rngmod.GENERATE, k, _STAGE_REPAY)
        T[a:b], lam[a:b], latent[a:b], elam[a:b], h = _repayment(spec, male[a:b], c, g)
        if H is not None:
            H[a:b] = h

    dec = spec.decision
    use = latent if (spec.repayment == "gaussian" and spec.gaussian_decision_on == "latent") else lam
    mu, sigma0 = {}, {}
    for gi, gender in enumerate(GENDERS):
        sel = male == gi
        if dec.mu is None:
            mu[gender] = float(use[sel].mean()) if sel.any() else 0.0
        else:
            mu[gender] = float(dec.mu[gender])
        if dec.sigma0 is None:
            sigma0[gender] = float(use[sel].std()) if sel.any() else 0.0
        else:
            sigma0[gender] = float(dec.sigma0[gender])
    gamma = {gd: signal_reliability(sigma0[gd], dec.sigma1[gd]) for gd in GENDERS}

    base = use if dec.signal == "realized" else elam
    signal = np.zeros(n)
    expected = np.zeros(n)
    funded = np.zeros(n, bool)
    censor_at = np.full(n, TERM, np.int64)
    rate = cols["rate"]
    for k, a, b in _chunks(n, spec.chunk_size):
        g = rngmod.stream(spec.seed, rngmod.GENERATE, k, _STAGE_FUND)
        eps = g.standard_normal(b - a)
        gc = rngmod.stream(spec.seed, rngmod.GENERATE, k, _STAGE_CENSOR)
        cut = gc.integers(1, TERM, b - a)
        is_cut = gc.random(b - a) < spec.censor_rate
        censor_at[a:b] = np.where(is_cut, cut, TERM)
        for gi, gender in enumerate(GENDERS):
            sel = np.flatnonzero(male[a:b] == gi) + a
            s1, gm = dec.sigma1[gender], gamma[gender]
            signal[sel] = base[sel] + s1 * eps[sel - a]
            expected[sel] = (1 - gm) * mu[gender] + gm * signal[sel]
            funded[sel] = expected[sel] * (1 + rate[sel]) >= dec.pi[gender] - FUNDING_TOL

    truth = GroundTruth(T, lam, latent, elam, signal, expected, funded, censor_at, male.copy(), rate.copy(),
                        H, mu, sigma0, gamma)
    if spec.funding_rule is not None:
        truth.funded = np.asarray(spec.funding_rule(cols, truth), bool)
        funded = truth.funded
    truth.censor_at = np.where(funded, censor_at, TERM)

    pay = np.full((n, TERM), ABSENT, np.int8)
    month = np.arange(TERM)[None, :]
    status = np.where(month < T[:, None], PAID, DEFAULTED)
    status = np.where(month >= truth.censor_at[:, None], UNOBSERVED, status)
    pay[funded] = status[funded]
    width = len(str(max(n - 1, 1)))
    ids = [f"L{i:0{width}d}" for i in range(n)]
    return LoanTable(ids, male, funded, pay, cols), truth


# disparate impact oracles ------------------------------------------------------------


def true_di(truth: GroundTruth, bins=None):
    """DI from the true return rate of every loan."""
    from .di import nonparametric_di
    return nonparametric_di(truth.return_rate, truth.funded, truth.male, bins)


def population_di(spec: MarketSpec, bins=None, n: int = 2_000_000, seed: int | None = None,
                  chunk: int = 250_000):
    """Monte Carlo DI of the market's population (fixed decision moments required)."""
    from .di import DiAccumulator
    if spec.decision.mu is None or spec.decision.sigma0 is None:
        if spec.repayment != "gaussian" or spec.gaussian_decision_on != "latent":
            raise ValueError("population DI needs fixed decision moments (mu, sigma0) in the market spec")
    acc = DiAccumulator(bins)
    seed = spec.seed if seed is None else seed
    for k, a, b in _chunks(n, chunk):
        sub = replace(spec, n=b - a, seed=rngmod.derive_seed(seed, rngmod.GENERATE, 999, k),
                      chunk_size=chunk, censor_rate=0.0)
        _, truth = generate(sub)
        acc.add(truth.return_rate, truth.funded, truth.male)
    return acc.estimate()


# first-stage bias oracle ---------------------------------------------------------------


@dataclass
class BiasReport:
    bin_edges: np.ndarray
    cell_bias: dict            # (gender, rate) -> (13,) b_{g,r}(l)
    average_bias: dict         # gender -> per-bin average first-stage bias b_g
    predicted: np.ndarray      # bias identity with the 1 / P_g(Y=y, D=1) factor
    predicted_literal: np.ndarray  # same expression without that factor
    measured: np.ndarray       # DI-hat(y) - DI(y) from one imputation draw
    mc_se: np.ndarray          # imputation Monte Carlo standard error of ``measured``
    excluded_cells: list

    def z_scores(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return (self.measured - self.predicted) / self.mc_se


def bias_oracle(truth: GroundTruth, model, table: LoanTable, bins=None, multiplier: float = 1.0,
                seed: int = 0, n_draws: int = 200) -> BiasReport:
    """First-stage bias on unfunded loans and the implied 2SPS bias per bin.

    With ``a = P_g(Y in bin, D=1)``, ``u = P_g(Y in bin, D=0)`` and the
    imputed counterpart ``u_hat``, the funding rate moves from ``a/(a+u)`` to
    ``a/(a+u_hat)``; the difference is
    ``-(u_hat - u) / (a (1 + u_hat/a)(1 + u/a))`` with
    ``u_hat - u = P_g(D=0) * b_g``.  The first-stage bias uses the model's
    exact default-time distribution for every unfunded loan; ``measured``
    is DI-hat minus DI from one imputation draw and ``mc_se`` the standard
    deviation of that difference over ``n_draws`` draws.  Right-censored
    funded loans count as fully observed (ground truth).
    """
    from . import cox
    from .di import DEFAULT_BINS, bin_index, nonparametric_di
    edges = np.asarray(DEFAULT_BINS if bins is None else bins, float)
    nb = len(edges) - 1
    unf = ~truth.funded
    rate = truth.rate
    H = cox.hazard_matrix(model, table, multiplier)
    P = default_time_distribution(H)
    lam_levels = np.arange(TERM + 1) / TERM
    yb = bin_index(lam_levels[None, :] * (1 + rate[:, None]), edges)  # bin of each (loan, level)
    true_bin = bin_index(truth.return_rate, edges)

    cell_bias, excluded, avg, comp = {}, [], {}, {}
    for gi, gender in enumerate(GENDERS):
        sel = truth.male == gi
        ng = sel.sum()
        if ng == 0:
            raise ValueError("both genders are required")
        u0 = sel & unf
        p_d0 = u0.sum() / ng
        for r in np.unique(rate[sel]):
            c = u0 & (rate == r)
            if c.sum() == 0:
                excluded.append((gender, float(r)))
                continue
            tru = np.bincount(np.rint(truth.lam[c] * TERM).astype(int), minlength=TERM + 1) / c.sum()
            cell_bias[(gender, float(r))] = P[c].mean(axis=0) - tru
        a = np.bincount(true_bin[sel & truth.funded], minlength=nb + 1)[:nb] / ng
        u = np.bincount(true_bin[u0], minlength=nb + 1)[:nb] / ng
        uh = np.bincount(np.clip(yb[u0], 0, nb).ravel(), weights=P[u0].ravel(), minlength=nb + 1)[:nb] / ng
        # average first-stage bias: sum_r P(R=r | D=0) b_{g,r}(y/r), aggregated within each bin
        bg = (uh - u) / p_d0 if p_d0 > 0 else np.zeros(nb)
        avg[gender] = bg
        comp[gender] = (a, u, uh, p_d0, bg)
    pred = np.zeros(nb)
    lit = np.zeros(nb)
    sign = {"m": 1.0, "f": -1.0}
    with np.errstate(invalid="ignore", divide="ignore"):
        for gender in GENDERS:
            a, u, uh, p_d0, bg = comp[gender]
            blue = (1 + uh / a) * (1 + u / a)
            pred += sign[gender] * (-(p_d0 * bg) / (a * blue))
            lit += sign[gender] * (-(p_d0 * bg) / blue)
    tru = nonparametric_di(truth.return_rate, truth.funded, truth.male, edges)
    draws = []
    for k in range(max(n_draws, 2)):
        g = rngmod.stream(seed, rngmod.DIAGNOSTICS, 11, k)
        T_imp = cox.sample_default_times(H, 0, g)
        y_hat = np.where(unf, T_imp / TERM * (1 + rate), truth.return_rate)
        draws.append(nonparametric_di(y_hat, truth.funded, truth.male, edges).per_bin_di - tru.per_bin_di)
    draws = np.array(draws)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        se = np.nanstd(draws, axis=0, ddof=1)
    return BiasReport(edges, cell_bias, avg, pred, lit, draws[0], se, excluded)


# presets ---------------------------------------------------------------------------


CALIBRATED_COVARIATES = {
    "m": GroupCovariates(married=0.485, repeated=0.484, app=0.187, express=0.015,
                         employment=(0.251, 0.037, 0.506, 0.195, 0.011),
                         education=(0.753, 0.011, 0.152, 0.081, 0.003),
                         province=(0.35, 0.25, 0.2, 0.2),
                         age_mean=28.48, past_failed=0.264, past_aborted=0.387, past_ontime=3.818,
                         past_late=0.874, amount_mean=3.354, rate_mean=0.259),
    "f": GroupCovariates(married=0.506, repeated=0.460, app=0.272, express=0.035,
                         employment=(0.338, 0.041, 0.438, 0.166, 0.017),
                         education=(0.717, 0.014, 0.181, 0.087, 0.001),
                         province=(0.35, 0.25, 0.2, 0.2),
                         age_mean=27.66, past_failed=0.282, past_aborted=0.327, past_ontime=3.484,
                         past_late=0.766, amount_mean=3.566, rate_mean=0.237),
}

CALIBRATED_COEF = {
    "male": 0.408, "married": -0.239, "app": 0.170, "express": -0.284, "repeated": -0.169,
    "employment:1": -0.196, "employment:2": 0.165, "employment:3": 0.027, "employment:4": -0.175,
    "education:1": -0.513, "education:2": -0.475, "education:3": -0.673, "education:4": -1.383,
    "province:1": 0.1, "province:2": -0.1, "province:3": 0.05,
    "age": -0.01, "past_failed": 0.08, "past_aborted": 0.05, "past_ontime": -0.03, "past_late": 0.06,
    "amount": 0.04, "rate": 3.0,
}
CALIBRATED_CENTERS = {"age": 28.0, "past_failed": 0.27, "past_aborted": 0.37, "past_ontime": 3.7,
                 "past_late": 0.85, "amount": 3.4, "rate": 0.25}
# month 0 highest, abrupt drop, slow rise to months 6-7, then decline toward 0; scaled so the
# no-default shares and repayment-ratio moments match the calibration targets
CALIBRATED_BASELINE = (0.01092, 0.00541, 0.00634, 0.00728, 0.00822, 0.00915, 0.00967, 0.00967, 0.00874,
                  0.00676, 0.0052, 0.00156)

DECISION_TARGETS = {"mu": {"f": 0.957, "m": 0.934}, "sigma0": {"f": 0.167, "m": 0.205},
          "sigma1": {"f": 0.482, "m": 0.574}, "gamma": {"f": 0.107, "m": 0.113},
          "pi": {"f": 1.099, "m": 1.079}}


def calibrated_market(n: int, seed: int, signal: str = "expected", empirical_moments: bool = False,
                 baseline_scale: float = 1.0) -> MarketSpec:
    """Market with covariate shares, hazard effects and decision parameters of
    the calibration targets.  Fixed decision moments are the target values."""
    hz = HazardSpec(baseline=tuple(baseline_scale * h for h in CALIBRATED_BASELINE),
                    coef=dict(CALIBRATED_COEF), centers=dict(CALIBRATED_CENTERS))
    dec = DecisionSpec(pi=dict(DECISION_TARGETS["pi"]), sigma1=dict(DECISION_TARGETS["sigma1"]),
                       mu=None if empirical_moments else dict(DECISION_TARGETS["mu"]),
                       sigma0=None if empirical_moments else dict(DECISION_TARGETS["sigma0"]), signal=signal)
    return MarketSpec(n=n, seed=seed, covariates=dict(CALIBRATED_COVARIATES), hazard=hz, decision=dec)


def null_market(n: int, seed: int, **kw) -> MarketSpec:
    """Both genders share covariates, hazard and decision parameters."""
    cov = GroupCovariates()
    hz = HazardSpec(coef={k: v for k, v in CALIBRATED_COEF.items() if k != "male"}, centers=dict(CALIBRATED_CENTERS))
    dec = DecisionSpec(pi={"f": 1.09, "m": 1.09}, sigma1={"f": 0.5, "m": 0.5},
                       mu={"f": 0.95, "m": 0.95}, sigma0={"f": 0.18, "m": 0.18}, signal="expected")
    return MarketSpec(n=n, seed=seed, male_share=0.5, covariates={"f": cov, "m": cov}, hazard=hz,
                      decision=dec, **kw)


RECOVERY_COVARIATES = GroupCovariates(married=0.5, repeated=0.4, app=0.3, express=0.3,
                                      employment=(0.4, 0.2, 0.2, 0.2, 0.0),
                                      education=(0.4, 0.3, 0.3, 0.0, 0.0), province=(1.0,),
                                      past_ontime=3.0, past_late=1.0, rate_mean=0.26)
RECOVERY_COEF = {"male": 0.4, "married": -0.25, "repeated": -0.2, "app": 0.2, "express": -0.3,
                 "employment:1": -0.2, "employment:2": 0.15, "employment:3": 0.3,
                 "education:1": -0.5, "education:2": -0.3,
                 "age": -0.02, "past_ontime": -0.05, "past_late": 0.1, "amount": 0.08, "rate": 2.0}
RECOVERY_CENTERS = {"age": 28.0, "past_ontime": 3.0, "past_late": 1.0, "amount": 3.4, "rate": 0.26}
RECOVERY_BASELINE = (0.08, 0.03, 0.035, 0.04, 0.045, 0.05, 0.05, 0.05, 0.045, 0.04, 0.03, 0.02)


def recovery_market(n: int, seed: int, male_time=(0.0, -0.2, -0.3), continuous_time: bool = False,
                    baseline_scale: float = 1.0) -> MarketSpec:
    """Balanced covariates and frequent defaults, for coefficient recovery."""
    hz = HazardSpec(baseline=tuple(baseline_scale * h for h in RECOVERY_BASELINE), coef=dict(RECOVERY_COEF), centers=dict(RECOVERY_CENTERS),
                    male_time=tuple(male_time), continuous_time=continuous_time)
    return MarketSpec(n=n, seed=seed, male_share=0.5,
                      covariates={"f": RECOVERY_COVARIATES, "m": RECOVERY_COVARIATES}, hazard=hz,
                      funding_rule=lambda cols, truth: np.ones(len(truth.lam), bool), censor_rate=0.02)
