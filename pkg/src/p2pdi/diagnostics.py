"""Adequacy checks for a fitted hazard model.

Scaled Schoenfeld residuals with a zero-slope score test, Cox-Snell residuals
against the unit-exponential cumulative hazard, and the rank of each
defaulted loan's predicted hazard within its month's risk set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .cox import FittedHazardModel, RiskData, efron, hazard_matrix
from .data_model import TERM, SurvivalData, encode_survival


class DiagnosticsError(ValueError):
    pass


def _survival(samples) -> SurvivalData:
    return samples if isinstance(samples, SurvivalData) else encode_survival(samples)


# Schoenfeld ---------------------------------------------------------------------


@dataclass
class SmoothCurve:
    time: np.ndarray
    fit: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class SchoenfeldReport:
    """Residuals live at uncensored event times only.

    ``residuals`` are raw Schoenfeld residuals (events x parameters);
    ``scaled`` adds back the coefficient so that its time trend tracks
    ``beta_j(t)``.  Tests are keyed by covariate block.
    """

    names: list
    event_time: np.ndarray
    residuals: np.ndarray
    scaled: np.ndarray
    beta: np.ndarray
    blocks: dict               # covariate -> parameter indices
    chisq: dict
    df: dict
    p_value: dict
    global_chisq: float
    global_df: int
    global_p: float
    smooth: dict               # parameter name -> SmoothCurve

    def table(self) -> list[dict]:
        rows = [{"covariate": k, "chisq": self.chisq[k], "df": self.df[k], "p_value": self.p_value[k]}
                for k in self.blocks]
        rows.append({"covariate": "GLOBAL", "chisq": self.global_chisq, "df": self.global_df,
                     "p_value": self.global_p})
        return rows

    def panel_rows(self) -> list[dict]:
        """Plot data: scaled residual points and the smoothed curve per parameter."""
        rows = []
        for j, name in enumerate(self.names):
            for t, v in zip(self.event_time, self.scaled[:, j]):
                rows.append({"parameter": name, "kind": "residual", "time": int(t), "value": float(v),
                             "lower": "", "upper": ""})
            sm = self.smooth[name]
            for t, f, lo, hi in zip(sm.time, sm.fit, sm.lower, sm.upper):
                rows.append({"parameter": name, "kind": "smooth", "time": float(t), "value": float(f),
                             "lower": float(lo), "upper": float(hi)})
        return rows


def local_linear(x, y, grid, bandwidth: float, level: float = 0.95) -> SmoothCurve:
    """Gaussian-kernel local linear smooth with pointwise normal bands.

    Observations are pooled by distinct ``x`` (exact, since the fit is
    linear in ``y``); the noise variance is the mean squared residual around
    the smooth.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ux, inv = np.unique(x, return_inverse=True)
    n = np.bincount(inv).astype(float)
    ybar = np.bincount(inv, weights=y) / n
    h = bandwidth if bandwidth > 0 else 1.0

    def weights(x0):
        k = np.exp(-0.5 * ((ux - x0) / h) ** 2) * n
        dx = ux - x0
        s0, s1, s2 = k.sum(), (k * dx).sum(), (k * dx * dx).sum()
        det = s0 * s2 - s1 * s1
        if det <= 1e-12 * max(s0 * s2, 1e-300):
            return k / s0  # a single support point: local constant
        return k * (s2 - s1 * dx) / det  # weights on the pooled means

    at_x = np.array([weights(v) @ ybar for v in ux])
    sigma2 = float(((y - at_x[inv]) ** 2).mean()) if len(y) else 0.0
    grid = np.asarray(grid, float)
    fit, se = np.empty(len(grid)), np.empty(len(grid))
    for i, g in enumerate(grid):
        lw = weights(g)
        fit[i] = lw @ ybar
        se[i] = np.sqrt(sigma2 * (lw * lw / n).sum())
    z = stats.norm.ppf(0.5 + level / 2)
    return SmoothCurve(grid, fit, fit - z * se, fit + z * se)


def schoenfeld(model: FittedHazardModel, samples, grid_points: int = 45,
               bandwidth_frac: float = 0.2) -> SchoenfeldReport:
    """Scaled Schoenfeld residuals and the zero-slope score test per covariate.

    The test adds ``x * (t - tbar)`` for the tested parameters and computes
    the exact Efron score test at the fitted coefficients, using the
    per-month information (blocks of parameters are tested jointly, with
    the remaining parameters profiled out).
    """
    data = _survival(samples)
    design = model.design
    risk = RiskData.from_survival(design, data)
    if np.count_nonzero(risk.d) < 2:
        raise DiagnosticsError("residuals undefined: all events occur at a single time")
    beta = model.beta
    terms = efron(risk, beta, hessian=True, per_month=True)
    co = terms.sums
    d = risk.d
    zbar = (co["A_R"] * co["s0"] - co["A_D"] * co["s1"]) / np.maximum(d, 1)  # (P, 12)
    ev, m = risk.ev_idx, risk.ev_month
    order = np.lexsort((ev, m))
    ev, m = ev[order], m[order]
    resid = risk.lift_rows(risk.X[ev], m) - zbar[:, m].T
    n_ev = len(ev)
    scaled = beta + n_ev * resid @ model.naive_cov

    g = np.arange(TERM, dtype=float) - (d * np.arange(TERM)).sum() / d.sum()
    U = terms.month_grad @ g
    infos = [-h for h in terms.month_hess]
    I_bb = sum(infos)
    I_tb = sum(gm * I for gm, I in zip(g, infos))
    I_tt = sum(gm * gm * I for gm, I in zip(g, infos))
    V = I_tt - I_tb @ linalg.solve(I_bb, I_tb.T, assume_a="sym")
    V = (V + V.T) / 2

    def score_test(idx):
        # directions already spanned by the fitted time interactions (x * t lies in the
        # span of x * ns(t)) carry no information; drop them by a scaled eigen cut
        u, v = U[idx], V[np.ix_(idx, idx)]
        sc = np.sqrt(np.clip(np.diag(I_tt)[idx], 1e-300, None))
        lam, Q = np.linalg.eigh(v / np.outer(sc, sc))
        keep = lam > 1e-8 * max(lam.max(), 1e-300)
        proj = Q[:, keep].T @ (u / sc)
        stat = float((proj ** 2 / lam[keep]).sum())
        df = int(keep.sum())
        return stat, df, float(stats.chi2.sf(stat, df)) if df > 0 else float("nan")

    blocks = design.block_slices()
    chisq, dfs, pv = {}, {}, {}
    for name, idx in blocks.items():
        chisq[name], dfs[name], pv[name] = score_test(idx)
    gstat, gdf, gp = score_test(np.arange(len(beta)))

    times = m.astype(float)
    lo, hi = times.min(), times.max()
    grid = np.linspace(lo, hi, grid_points)
    smooth = {name: local_linear(times, scaled[:, j], grid, bandwidth_frac * (hi - lo))
              for j, name in enumerate(design.names)}
    return SchoenfeldReport(list(design.names), m.copy(), resid, scaled, beta.copy(), blocks,
                            chisq, dfs, pv, gstat, gdf, gp, smooth)


# Cox-Snell ----------------------------------------------------------------------


@dataclass
class CoxSnellReport:
    residual: np.ndarray        # per sample, input order
    censored: np.ndarray
    grid: np.ndarray            # distinct residual values
    cumhaz: np.ndarray          # Nelson-Aalen cumulative hazard of the residuals at ``grid``
    max_deviation: float
    range: tuple

    def plot_rows(self) -> list[dict]:
        return [{"residual": float(e), "cumulative_hazard": float(c)} for e, c in zip(self.grid, self.cumhaz)]


def nelson_aalen(time, event):
    """Nelson-Aalen estimate at the distinct times (ties: d / n at risk)."""
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    ut, inv = np.unique(time, return_inverse=True)
    d = np.bincount(inv, weights=event.astype(float), minlength=len(ut))
    cnt = np.bincount(inv, minlength=len(ut))
    at_risk = cnt[::-1].cumsum()[::-1]
    return ut, np.cumsum(d / at_risk)


def cox_snell(model: FittedHazardModel, samples, quantiles=(0.05, 0.95)) -> CoxSnellReport:
    """Estimated cumulative hazard of each sample at its observation time.

    Events include the hazard of the default month; censored loans stop at
    the last month they were at risk.
    """
    data = _survival(samples)
    H = hazard_matrix(model, data.table)
    C = np.hstack([np.zeros((len(H), 1)), np.cumsum(H, axis=1)])
    upto = np.where(data.censored, data.tau, data.tau + 1)
    eps = C[np.arange(len(H)), np.clip(upto, 0, TERM)]
    grid, cum = nelson_aalen(eps, ~data.censored)
    lo, hi = np.quantile(eps, quantiles)
    sel = (grid >= lo) & (grid <= hi)
    dev = float(np.abs(cum[sel] - grid[sel]).max()) if sel.any() else 0.0
    return CoxSnellReport(eps, data.censored.copy(), grid, cum, dev, (float(lo), float(hi)))


# default ranks ------------------------------------------------------------------


@dataclass
class RankReport:
    months: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    count: np.ndarray
    event_month: np.ndarray     # per defaulted loan
    rank: np.ndarray

    def plot_rows(self) -> list[dict]:
        return [{"month": int(m), "mean_rank": float(a), "lower": float(lo), "upper": float(hi),
                 "defaults": int(c)}
                for m, a, lo, hi, c in zip(self.months, self.mean, self.lower, self.upper, self.count)]


def default_rank(model: FittedHazardModel, samples, level: float = 0.95) -> RankReport:
    """Normalized rank of each defaulted loan's hazard in its month's risk set.

    The rank is the share of other at-risk loans with a lower predicted
    hazard (ties count one half), so 1 is the riskiest loan and 0.5 is the
    value for an uninformative model.  Months without defaults are omitted;
    intervals are normal approximations around the monthly mean.
    """
    data = _survival(samples)
    H = hazard_matrix(model, data.table)
    last = np.where(data.censored, data.tau - 1, data.tau)
    event = ~data.censored & (data.tau < TERM)
    z = stats.norm.ppf(0.5 + level / 2)
    months, mean, lower, upper, count, ev_m, ranks = [], [], [], [], [], [], []
    for mth in range(TERM):
        at = last >= mth
        dead = event & (data.tau == mth)
        k = int(dead.sum())
        n_r = int(at.sum())
        if k == 0 or n_r < 2:
            continue
        h_r = np.sort(H[at, mth])
        h_d = H[dead, mth]
        below = np.searchsorted(h_r, h_d, side="left")
        tied = np.searchsorted(h_r, h_d, side="right") - below - 1  # excluding the loan itself
        r = (below + 0.5 * tied) / (n_r - 1)
        sd = r.std(ddof=1) if k > 1 else float("nan")
        half = z * sd / np.sqrt(k)
        months.append(mth)
        mean.append(r.mean())
        lower.append(r.mean() - half)
        upper.append(r.mean() + half)
        count.append(k)
        ev_m.append(np.full(k, mth))
        ranks.append(r)
    cat = (lambda a: np.concatenate(a)) if ranks else (lambda a: np.array([]))
    return RankReport(np.array(months, int), np.array(mean), np.array(lower), np.array(upper),
                      np.array(count, int), cat(ev_m), cat(ranks))


# plot data ----------------------------------------------------------------------


def hazard_curve(model: FittedHazardModel, level: float = 0.95) -> list[dict]:
    """Baseline hazard per month and each time-varying coefficient with robust bands."""
    z = stats.norm.ppf(0.5 + level / 2)
    design = model.design
    F = design.time_basis
    p, K = len(design.main_names), F.shape[1]
    rows = []
    for mth in range(TERM):
        row = {"month": mth, "baseline_hazard": float(model.baseline[mth])}
        for s, j in enumerate(design.interaction_index):
            name = design.main_names[j]
            idx = [j] + [p + s * K + k for k in range(K)]
            c = np.concatenate([[1.0], F[mth]])
            b = float(c @ model.beta[idx])
            cov = model.robust_cov[np.ix_(idx, idx)]
            if not np.isfinite(cov).all():
                cov = model.naive_cov[np.ix_(idx, idx)]
            se = float(np.sqrt(max(c @ cov @ c, 0.0)))
            row[f"{name}_coef"] = b
            row[f"{name}_lower"] = b - z * se
            row[f"{name}_upper"] = b + z * se
        rows.append(row)
    return rows
