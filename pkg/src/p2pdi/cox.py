"""Generalized Cox model on monthly default data.

Event times are months 0..11, so ties are massive and handled with Efron's
approximation.  Time-varying effects ``x * ns(t)`` are estimated in the
counting-process form: each loan is at risk in months ``0..last`` and
contributes, at month ``m``, the covariate row ``[x, x_S * ns(m)]``.  Rather
than materializing those per-month rows, the risk-set sums are accumulated
from an ``(n, 12)`` matrix of relative risks, which yields the same partial
likelihood, score and information at a fraction of the memory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .data_model import TERM, LoanRecord, LoanTable, RepaymentOutcome, SurvivalData, encode_survival
from .design import Design, DesignConfig

MODEL_SCHEMA = "p2pdi.hazard-model"
MODEL_VERSION = 1


class FitError(RuntimeError):
    pass


class ConvergenceError(FitError):
    def __init__(self, message, grad_norm):
        super().__init__(message)
        self.grad_norm = grad_norm


class RankDeficiencyError(FitError):
    def __init__(self, columns):
        super().__init__(f"design is rank deficient; collinear columns: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass
class RiskData:
    """Loan-level arrays for the partial likelihood.

    ``last`` is the last month a loan is at risk (``tau`` for events,
    ``tau - 1`` for censored loans); loans never at risk are removed.
    """

    X: np.ndarray
    last: np.ndarray
    event: np.ndarray
    F: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        keep = self.last >= 0
        if not keep.all():
            self.X, self.last, self.event = self.X[keep], self.last[keep], self.event[keep]
        self.at_risk = np.arange(TERM)[None, :] <= self.last[:, None]
        self.ev_idx = np.flatnonzero(self.event)
        self.ev_month = self.last[self.ev_idx]
        self.d = np.bincount(self.ev_month, minlength=TERM)
        onehot = np.zeros((len(self.ev_idx), TERM))
        onehot[np.arange(len(self.ev_idx)), self.ev_month] = 1.0
        self.ev_onehot = onehot
        self.ev_xsum = self.X[self.ev_idx].T @ onehot  # (p, 12)

    @classmethod
    def from_survival(cls, design: Design, data: SurvivalData) -> "RiskData":
        last = np.where(data.censored, data.tau - 1, data.tau)
        return cls(design.matrix(data.table), last.astype(np.int64), ~data.censored,
                   design.time_basis, design.interaction_index)

    @property
    def n_params(self) -> int:
        return self.X.shape[1] + len(self.S) * self.F.shape[1]

    def lift(self, Ax: np.ndarray) -> np.ndarray:
        """Map per-month covariate sums ``(p, 12)`` to full parameter space ``(P, 12)``."""
        if len(self.S) == 0:
            return Ax
        inter = Ax[self.S][:, None, :] * self.F.T[None, :, :]  # (|S|, K, 12)
        return np.vstack([Ax, inter.reshape(-1, TERM)])

    def lift_rows(self, Xr: np.ndarray, months: np.ndarray) -> np.ndarray:
        """Per-month design rows for loan rows ``Xr`` observed at ``months``."""
        if len(self.S) == 0:
            return Xr
        inter = Xr[:, self.S][:, :, None] * self.F[months][:, None, :]
        return np.hstack([Xr, inter.reshape(len(Xr), len(self.S) * self.F.shape[1])])

    def eta(self, beta: np.ndarray) -> np.ndarray:
        p = self.X.shape[1]
        eta = np.repeat((self.X @ beta[:p])[:, None], TERM, axis=1)
        if len(self.S):
            B2 = beta[p:].reshape(len(self.S), self.F.shape[1])
            eta += (self.X[:, self.S] @ B2) @ self.F.T
        return eta


@dataclass
class EfronTerms:
    loglik: float
    grad: np.ndarray
    hess: np.ndarray | None
    month_grad: np.ndarray | None = None  # (P, 12) score contribution per month
    month_hess: list | None = None
    w: np.ndarray | None = None
    shift: np.ndarray | None = None
    sums: dict = field(default_factory=dict)


def _month_coeffs(S_R, S_D, d):
    """Efron sums over the tied-event index for every month."""
    out = {k: np.zeros(TERM) for k in ("s0", "s1", "t0", "t1", "t2", "logphi")}
    for m in range(TERM):
        if d[m] == 0:
            continue
        c = np.arange(d[m]) / d[m]
        phi = S_R[m] - c * S_D[m]
        inv = 1.0 / phi
        out["s0"][m] = inv.sum()
        out["s1"][m] = (c * inv).sum()
        out["t0"][m] = (inv * inv).sum()
        out["t1"][m] = (c * inv * inv).sum()
        out["t2"][m] = (c * c * inv * inv).sum()
        out["logphi"][m] = np.log(phi).sum()
    return out


def efron(risk: RiskData, beta: np.ndarray, hessian: bool = True, per_month: bool = False) -> EfronTerms:
    """Efron partial log-likelihood, score and Hessian at ``beta``."""
    eta = risk.eta(beta)
    masked = np.where(risk.at_risk, eta, -np.inf)
    shift = masked.max(axis=0)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    w = np.where(risk.at_risk, np.exp(np.minimum(eta - shift, 700.0)), 0.0)

    S_R = w.sum(axis=0)
    AxR = risk.X.T @ w
    w_ev = w[risk.ev_idx, risk.ev_month]
    S_D = np.bincount(risk.ev_month, weights=w_ev, minlength=TERM)
    AxD = risk.X[risk.ev_idx].T @ (risk.ev_onehot * w_ev[:, None])
    co = _month_coeffs(S_R, S_D, risk.d)

    A_R, A_D = risk.lift(AxR), risk.lift(AxD)
    ev_z = risk.lift(risk.ev_xsum)
    eta_ev = eta[risk.ev_idx, risk.ev_month]
    loglik = float(eta_ev.sum() - (co["logphi"] + risk.d * shift).sum())
    month_grad = ev_z - (A_R * co["s0"] - A_D * co["s1"])
    grad = month_grad.sum(axis=1)

    out = EfronTerms(loglik, grad, None, month_grad if per_month else None, w=w, shift=shift,
                     sums=dict(co, A_R=A_R, A_D=A_D, S_R=S_R, S_D=S_D))
    if not hessian:
        return out

    def outer_terms(idx):
        t0, t1, t2 = co["t0"][idx], co["t1"][idx], co["t2"][idx]
        aR, aD = A_R[:, idx], A_D[:, idx]
        cross = (aR * t1) @ aD.T
        return (aR * t0) @ aR.T - cross - cross.T + (aD * t2) @ aD.T

    if per_month:
        out.month_hess = []
        for m in range(TERM):
            out.month_hess.append(-_info_month(risk, w, co, A_R, A_D, m, w_ev))
        out.hess = sum(out.month_hess)
        return out

    info = _gram_risk(risk, w, co["s0"]) - _gram_events(risk, w_ev, co["s1"][risk.ev_month]) \
        - outer_terms(slice(None))
    out.hess = -info
    return out


def _gram_risk(risk: RiskData, w: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``sum_m c_m sum_{i in R_m} w_im z_im z_im^T`` without forming per-month rows."""
    X, S, F = risk.X, risk.S, risk.F
    p, K = X.shape[1], F.shape[1]
    P = p + len(S) * K
    G = np.zeros((P, P))
    v = w @ c
    G[:p, :p] = X.T @ (X * v[:, None])
    if len(S):
        XS = X[:, S]
        ns = len(S)
        for k in range(K):
            vk = w @ (c * F[:, k])
            blk = X.T @ (XS * vk[:, None])  # (p, |S|)
            cols = p + np.arange(ns) * K + k
            G[:p, cols] = blk
            G[cols, :p] = blk.T
            for k2 in range(k, K):
                vkk = w @ (c * F[:, k] * F[:, k2])
                b2 = XS.T @ (XS * vkk[:, None])
                cols2 = p + np.arange(ns) * K + k2
                G[np.ix_(cols, cols2)] = b2
                G[np.ix_(cols2, cols)] = b2.T
    return G


def _gram_events(risk: RiskData, w_ev: np.ndarray, c_ev: np.ndarray) -> np.ndarray:
    Z = risk.lift_rows(risk.X[risk.ev_idx], risk.ev_month)
    return Z.T @ (Z * (w_ev * c_ev)[:, None])


def _info_month(risk, w, co, A_R, A_D, m, w_ev):
    c = np.zeros(TERM)
    c[m] = co["s0"][m]
    sel = risk.ev_month == m
    Z = risk.lift_rows(risk.X[risk.ev_idx[sel]], risk.ev_month[sel])
    bd = Z.T @ (Z * (w_ev[sel] * co["s1"][m])[:, None])
    aR, aD = A_R[:, m], A_D[:, m]
    outer = co["t0"][m] * np.outer(aR, aR) - co["t1"][m] * (np.outer(aR, aD) + np.outer(aD, aR)) \
        + co["t2"][m] * np.outer(aD, aD)
    return _gram_risk(risk, w, c) - bd - outer


def score_residuals(risk: RiskData, beta: np.ndarray) -> np.ndarray:
    """Per-loan score residuals (Efron form); rows sum to the score."""
    t = efron(risk, beta, hessian=False)
    w, co = t.w, t.sums
    A_R, A_D = co["A_R"], co["A_D"]
    X, S, F = risk.X, risk.S, risk.F
    p, K = X.shape[1], F.shape[1]
    Q = A_R * co["t0"] - A_D * co["t1"]  # (P, 12)
    parts = [-X * (w @ co["s0"])[:, None]]
    for s in range(len(S)):
        for k in range(K):
            parts.append(-X[:, S[s]][:, None] * (w @ (co["s0"] * F[:, k]))[:, None])
    R = np.hstack(parts) if len(S) else parts[0]
    R = R + w @ Q.T  # interaction columns are laid out s-major, matching the parameter vector
    ev, m = risk.ev_idx, risk.ev_month
    z = risk.lift_rows(X[ev], m)
    w_ev = w[ev, m]
    mean_zbar = ((A_R * co["s0"] - A_D * co["s1"]) / np.maximum(risk.d, 1))[:, m].T
    corr = z - mean_zbar + z * (w_ev * co["s1"][m])[:, None] \
        - w_ev[:, None] * (A_R * co["t1"] - A_D * co["t2"])[:, m].T
    np.add.at(R, ev, corr)
    return R


@dataclass
class FittedHazardModel:
    design: Design
    beta: np.ndarray
    baseline: np.ndarray
    robust_cov: np.ndarray
    naive_cov: np.ndarray
    concordance: float = float("nan")
    loglik: float = float("nan")
    n_loans: int = 0
    n_events: int = 0
    iterations: int = 0
    loglik_path: list = field(default_factory=list)
    grad_norm: float = float("nan")

    @property
    def names(self) -> list[str]:
        return self.design.names

    @property
    def n_main(self) -> int:
        return len(self.design.main_names)

    @property
    def beta_main(self) -> np.ndarray:
        return self.beta[: self.n_main]

    @property
    def beta_time(self) -> np.ndarray:
        return self.beta[self.n_main:]

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.robust_cov), 0, None))

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def summary(self) -> list[dict]:
        se = self.robust_se
        from scipy.stats import norm
        rows = []
        for i, name in enumerate(self.names):
            z = self.beta[i] / se[i] if se[i] > 0 else float("nan")
            rows.append({"term": name, "coef": float(self.beta[i]), "robust_se": float(se[i]),
                         "exp_coef": float(np.exp(min(self.beta[i], 700.0))),
                         "p_value": float(2 * norm.sf(abs(z))) if np.isfinite(z) else float("nan")})
        return rows

    # serialization ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA, "version": MODEL_VERSION,
            "design": self.design.to_dict(), "names": self.names,
            "beta": self.beta.tolist(), "baseline": self.baseline.tolist(),
            "robust_cov": self.robust_cov.tolist(), "naive_cov": self.naive_cov.tolist(),
            "concordance": self.concordance, "loglik": self.loglik,
            "n_loans": self.n_loans, "n_events": self.n_events,
            "iterations": self.iterations, "loglik_path": list(self.loglik_path),
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedHazardModel":
        if d.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"not a hazard model file (schema={d.get('schema')!r})")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported hazard model version {d.get('version')}")
        return cls(Design.from_dict(d["design"]), np.array(d["beta"]), np.array(d["baseline"]),
                   np.array(d["robust_cov"]), np.array(d["naive_cov"]), d["concordance"], d["loglik"],
                   d["n_loans"], d["n_events"], d["iterations"], d["loglik_path"], d["grad_norm"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FittedHazardModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_rank(X: np.ndarray, names: list[str], tol: float = 1e-9) -> None:
    if X.shape[1] == 0:
        return
    Xc = X - X.mean(axis=0)
    scale = np.sqrt((Xc ** 2).sum(axis=0))
    bad = [names[j] for j in np.flatnonzero(scale <= tol * max(1.0, math.sqrt(len(X))))]
    if bad:
        raise RankDeficiencyError(bad)
    Xc = Xc / scale
    _, R, piv = linalg.qr(Xc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > tol * max(diag[0], 1.0) * 1e3).sum())
    if rank < X.shape[1]:
        raise RankDeficiencyError([names[j] for j in piv[rank:]])


def breslow_baseline(risk: RiskData, beta: np.ndarray) -> np.ndarray:
    t = efron(risk, beta, hessian=False)
    denom = t.sums["S_R"] * np.exp(t.shift)
    h0 = np.where(risk.d > 0, risk.d / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(h0, 0.0, 1.0)


def fit(data, config: DesignConfig | Design | None = None, init: np.ndarray | None = None,
        max_iter: int = 50, tol: float = 1e-9, compute_concordance: bool = True,
        robust: bool = True) -> FittedHazardModel:
    """Maximum Efron partial likelihood by Newton's method with step halving.

    ``data`` is a :class:`SurvivalData` or a table of funded loans.  Passing a
    fitted :class:`Design` reuses its knots and levels (bootstrap refits);
    ``robust=False`` skips the sandwich covariance.
    """
    if not isinstance(data, SurvivalData):
        data = encode_survival(data)
    if isinstance(config, Design):
        design = config
    else:
        design = Design.build(config or DesignConfig(), data.table)
    risk = RiskData.from_survival(design, data)
    if np.count_nonzero(risk.d) < 2:
        raise FitError("at least two distinct event times are required")
    check_rank(risk.X, design.main_names)

    P = risk.n_params
    beta = np.zeros(P) if init is None else np.array(init, dtype=float)
    cur = efron(risk, beta)
    path = [cur.loglik]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        info = -cur.hess
        try:
            cho = linalg.cho_factor(info)
            step = linalg.cho_solve(cho, cur.grad)
        except linalg.LinAlgError:
            ev, vec = np.linalg.eigh(info)
            null = vec[:, np.argmin(ev)]
            names = design.names
            raise RankDeficiencyError([names[j] for j in np.argsort(-np.abs(null))[:2]]) from None
        scale = 1.0
        for _ in range(40):
            new = efron(risk, beta + scale * step)
            if np.isfinite(new.loglik) and new.loglik >= cur.loglik - 1e-12 * abs(cur.loglik):
                break
            scale *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the partial likelihood",
                                   float(np.linalg.norm(cur.grad)))
        beta = beta + scale * step
        change = abs(new.loglik - cur.loglik) / max(abs(cur.loglik), 1e-300)
        cur = new
        path.append(cur.loglik)
        if change <= tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"no convergence after {max_iter} iterations; gradient norm {np.linalg.norm(cur.grad):.3e}",
            float(np.linalg.norm(cur.grad)))

    info = -cur.hess
    naive = linalg.inv(info)
    naive = (naive + naive.T) / 2
    if robust:
        resid = score_residuals(risk, beta)
        rcov = naive @ (resid.T @ resid) @ naive
        rcov = (rcov + rcov.T) / 2
    else:
        rcov = np.full_like(naive, np.nan)

    model = FittedHazardModel(
        design=design, beta=beta, baseline=breslow_baseline(risk, beta),
        robust_cov=rcov, naive_cov=naive, loglik=cur.loglik,
        n_loans=len(risk.last), n_events=int(risk.event.sum()), iterations=it,
        loglik_path=path, grad_norm=float(np.linalg.norm(cur.grad)))
    if compute_concordance:
        model.concordance = concordance(model, data)
    return model


# prediction ---------------------------------------------------------------------


def _as_table(x) -> LoanTable:
    if isinstance(x, LoanTable):
        return x
    if isinstance(x, LoanRecord):
        return LoanTable.from_records([x])
    if isinstance(x, SurvivalData):
        return x.table
    raise TypeError(f"expected LoanTable or LoanRecord, got {type(x).__name__}")


def linear_predictor(model: FittedHazardModel, loans) -> np.ndarray:
    """``(n, 12)`` linear predictor ``b1 x + b2 x ns(t)`` per loan and month."""
    table = _as_table(loans)
    design = model.design
    X = design.matrix(table)
    p = X.shape[1]
    eta = np.repeat((X @ model.beta[:p])[:, None], TERM, axis=1)
    S = design.interaction_index
    if len(S):
        F = design.time_basis
        B2 = model.beta[p:].reshape(len(S), F.shape[1])
        eta += (X[:, S] @ B2) @ F.T
    return eta


def hazard_from_eta(baseline: np.ndarray, eta: np.ndarray, multiplier: float = 1.0) -> np.ndarray:
    return np.clip(multiplier * baseline * np.exp(eta), 0.0, 1.0)


def hazard_matrix(model: FittedHazardModel, loans, multiplier: float = 1.0) -> np.ndarray:
    return hazard_from_eta(model.baseline, linear_predictor(model, loans), multiplier)


def hazard(model: FittedHazardModel, x, t: int) -> float:
    """Default probability at month ``t`` for one loan (record or one-row table)."""
    if not 0 <= t < TERM:
        raise ValueError("t must be a month in 0..11")
    return float(hazard_matrix(model, x)[0, t])


def predict_repayment(model: FittedHazardModel, x, rate: float, t0: int, rng: np.random.Generator,
                      multiplier: float = 1.0) -> RepaymentOutcome:
    """Draw a repayment outcome month by month from ``t0`` on."""
    if not 0 <= t0 <= TERM:
        raise ValueError("t0 must be in 0..12")
    h = hazard_matrix(model, x, multiplier)[0]
    return sample_path(h, rate, t0, rng)


def sample_path(h: np.ndarray, rate: float, t0: int, rng: np.random.Generator) -> RepaymentOutcome:
    t = t0
    while t < TERM:
        if rng.random() < h[t]:
            break
        t += 1
    return RepaymentOutcome.from_default_time(t, rate)


def sample_default_times(H: np.ndarray, t0, rng: np.random.Generator | None = None,
                         uniforms: np.ndarray | None = None) -> np.ndarray:
    """Vectorized draw of default months (12 = none) from an ``(n, 12)`` hazard matrix.

    Months before ``t0`` are skipped.  Passing ``uniforms`` couples draws
    across hazard matrices (same uniforms, monotone in the hazard).
    """
    n = H.shape[0]
    U = rng.random((n, TERM)) if uniforms is None else uniforms
    t0 = np.broadcast_to(np.asarray(t0), (n,))
    hit = (U < H) & (np.arange(TERM)[None, :] >= t0[:, None])
    return np.where(hit.any(axis=1), hit.argmax(axis=1), TERM)


# concordance --------------------------------------------------------------------


def risk_score(model: FittedHazardModel, loans) -> np.ndarray:
    """Expected cumulative hazard over the term, used to rank loans."""
    return hazard_matrix(model, loans).sum(axis=1)


def concordance_index(time, event, risk) -> float:
    """Harrell's C.  A pair is comparable when the earlier time is an event;
    higher risk should go with the earlier time; risk ties count one half."""
    time = np.asarray(time)
    event = np.asarray(event, dtype=bool)
    risk = np.asarray(risk, dtype=float)
    conc = ties = pairs = 0.0
    for t in np.unique(time[event]):
        later = np.sort(risk[time > t])
        if len(later) == 0:
            continue
        r = risk[event & (time == t)]
        lo = np.searchsorted(later, r, side="left")
        hi = np.searchsorted(later, r, side="right")
        conc += lo.sum()
        ties += (hi - lo).sum()
        pairs += len(r) * len(later)
    if pairs == 0:
        raise ValueError("no comparable pairs")
    return float((conc + 0.5 * ties) / pairs)


def concordance(model: FittedHazardModel, samples) -> float:
    if not isinstance(samples, SurvivalData):
        samples = encode_survival(samples)
    return concordance_index(samples.tau, samples.events, risk_score(model, samples.table))
