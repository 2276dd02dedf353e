"""Second stage: disparate impact from completed return rates.

Unfunded loans (and right-censored funded ones) get a return rate drawn from
the fitted hazard model; disparate impact is then the male minus female
funding rate within return-rate bins, averaged over the pooled bin
distribution.  OLS variants, the two-stage bootstrap, subset estimates and
the hazard-multiplier sweep live here as well.
"""

from __future__ import annotations

import ast
import math
import operator
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import cox, splines
from . import rng as rngmod
from .data_model import BINARY, CATEGORICAL, CONTINUOUS, TERM, LoanTable
from .design import DesignConfig

DEFAULT_BINS = np.round(np.arange(0.0, 1.40 + 1e-9, 0.02), 2)
DEFAULT_MULTIPLIERS = (1.0, 1.5, 2.0, 2.5, 3.0)


def bin_index(y, edges) -> np.ndarray:
    """Bin of each value for half-open bins ``[e_k, e_k+1)``; ``len(edges) - 1`` when outside.

    A tiny offset keeps products such as ``1 * (1 + 0.16)`` in the bin that
    starts at 1.16 despite floating-point rounding.
    """
    edges = np.asarray(edges, float)
    nb = len(edges) - 1
    idx = np.searchsorted(edges, np.asarray(y, float) + 1e-9, side="right") - 1
    return np.where((idx < 0) | (idx >= nb), nb, idx)


def parse_bins(spec) -> np.ndarray:
    """Bin edges from a list or a ``start:stop:width`` string."""
    if spec is None:
        return DEFAULT_BINS
    if isinstance(spec, str):
        if ":" in spec:
            a, b, w = (float(s) for s in spec.split(":"))
            edges = np.round(np.arange(a, b + w / 2, w), 10)
        else:
            edges = np.array([float(s) for s in spec.split(",")])
    else:
        edges = np.asarray(spec, float)
    if len(edges) < 2 or not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be strictly increasing with at least two edges")
    return edges


@dataclass
class DiEstimate:
    bin_edges: np.ndarray
    male_rate: np.ndarray
    female_rate: np.ndarray
    per_bin_di: np.ndarray
    weights: np.ndarray          # pooled bin distribution over bins used in the average
    male_count: np.ndarray
    female_count: np.ndarray
    average_di: float
    average_ci: tuple | None = None
    per_bin_ci: np.ndarray | None = None
    n_bootstrap: int = 0
    failures: int = 0
    replicates: np.ndarray | None = None

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.per_bin_di)

    def to_dict(self) -> dict:
        def f(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)
        bins = []
        for k in range(len(self.per_bin_di)):
            row = {"lo": float(self.bin_edges[k]), "hi": float(self.bin_edges[k + 1]),
                   "male_rate": f(self.male_rate[k]), "female_rate": f(self.female_rate[k]),
                   "di": f(self.per_bin_di[k]), "weight": float(self.weights[k]),
                   "male_n": int(self.male_count[k]), "female_n": int(self.female_count[k])}
            if self.per_bin_ci is not None:
                row["ci"] = [f(self.per_bin_ci[k, 0]), f(self.per_bin_ci[k, 1])]
            bins.append(row)
        return {"average_di": f(self.average_di),
                "average_ci": None if self.average_ci is None else [f(c) for c in self.average_ci],
                "n_bootstrap": self.n_bootstrap, "failures": self.failures, "bins": bins}

    def plot_rows(self) -> list[dict]:
        rows = []
        for k in range(len(self.per_bin_di)):
            lo, hi = (np.nan, np.nan) if self.per_bin_ci is None else self.per_bin_ci[k]
            rows.append({"bin_lo": self.bin_edges[k], "bin_hi": self.bin_edges[k + 1],
                         "male_rate": self.male_rate[k], "female_rate": self.female_rate[k],
                         "di": self.per_bin_di[k], "di_lo": lo, "di_hi": hi, "weight": self.weights[k]})
        return rows


def _estimate_from_counts(edges, mn, mf, fn, ff) -> DiEstimate:
    """Counts per bin: male loans/funded, female loans/funded."""
    with np.errstate(invalid="ignore", divide="ignore"):
        mr = np.where(mn > 0, mf / mn, np.nan)
        fr = np.where(fn > 0, ff / fn, np.nan)
    di = mr - fr
    ok = ~np.isnan(di)
    tot = (mn + fn) * ok
    if tot.sum() == 0:
        avg = float("nan")
        w = np.zeros(len(di))
    else:
        w = tot / tot.sum()
        avg = float(np.sum(np.where(ok, di, 0.0) * w))
    return DiEstimate(edges, mr, fr, di, w, mn.astype(int), fn.astype(int), avg)


def nonparametric_di(y, funded, male, bins=None) -> DiEstimate:
    """Binned DI point estimate.

    Bins lacking one gender are reported as missing and left out of the
    average, whose weights are renormalized over the remaining bins.
    """
    edges = parse_bins(bins)
    y = np.asarray(y, float)
    funded = np.asarray(funded, bool)
    male = np.asarray(male).astype(bool)
    if male.all() or (~male).all():
        raise ValueError("both genders must be present")
    if np.isnan(y).any():
        raise ValueError("return rates contain NaN; impute first")
    nb = len(edges) - 1
    b = bin_index(y, edges)

    def cnt(mask):
        return np.bincount(b[mask], minlength=nb + 1)[:nb].astype(float)

    return _estimate_from_counts(edges, cnt(male), cnt(male & funded), cnt(~male), cnt(~male & funded))


class DiAccumulator:
    """Streaming bin counts, for DI over more loans than fit in memory."""

    def __init__(self, bins=None):
        self.edges = parse_bins(bins)
        nb = len(self.edges) - 1
        self.c = np.zeros((4, nb))

    def add(self, y, funded, male):
        nb = len(self.edges) - 1
        b = bin_index(y, self.edges)
        male = np.asarray(male).astype(bool)
        funded = np.asarray(funded, bool)
        for k, mask in enumerate([male, male & funded, ~male, ~male & funded]):
            self.c[k] += np.bincount(b[mask], minlength=nb + 1)[:nb]

    def estimate(self) -> DiEstimate:
        return _estimate_from_counts(self.edges, *self.c)


# imputation ----------------------------------------------------------------------


@dataclass
class Imputed:
    lam: np.ndarray
    y: np.ndarray
    imputed: np.ndarray  # mask of loans whose outcome was drawn


def impute_returns(model, table: LoanTable, g: np.random.Generator | None = None,
                   multiplier: float = 1.0, uniforms: np.ndarray | None = None) -> Imputed:
    """Complete the return rate of every loan.

    Unfunded loans are drawn from month 0 with hazards scaled by
    ``multiplier`` (then clamped); right-censored funded loans continue from
    their first unobserved month at the fitted hazards; the rest keep their
    observed outcome.  One ``(n, 12)`` block of uniforms is consumed per call.
    """
    if multiplier < 1:
        raise ValueError("hazard multiplier must be at least 1")
    n = len(table)
    U = g.random((n, TERM)) if uniforms is None else uniforms
    lam, known = table.observed_repayment()
    tau, _ = table.observation()
    todo = ~known
    lam = lam.copy()
    if todo.any():
        unf = ~table.funded
        eta = cox.linear_predictor(model, table.take(np.flatnonzero(todo)))
        mult = np.where(unf[todo], multiplier, 1.0)
        H = np.clip(mult[:, None] * model.baseline[None, :] * np.exp(eta), 0.0, 1.0)
        t0 = np.where(unf[todo], 0, tau[todo])
        T = cox.sample_default_times(H, t0, uniforms=U[todo])
        lam[todo] = T / TERM
    return Imputed(lam, lam * (1.0 + table.rate), todo)


# OLS second stage --------------------------------------------------------------------


KINDS = ("DI", "DI_controls", "DT")


@dataclass
class OlsSecondStage:
    kind: str
    gender_coefficient: float
    se: float
    ci: tuple
    included: list
    names: list
    coef: np.ndarray
    aic: float
    n: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gender_coefficient": self.gender_coefficient, "se": self.se,
                "ci": list(self.ci), "included_covariates": list(self.included), "aic": self.aic, "n": self.n}


def _x_blocks(table: LoanTable, covariates=None):
    blocks = []
    for b in BINARY:
        blocks.append((b, table[b][:, None]))
    for c in CATEGORICAL:
        levels = [int(v) for v in np.unique(table[c]) if v != 0]
        if levels:
            blocks.append((c, np.column_stack([(table[c] == lev).astype(float) for lev in levels])))
    for c in CONTINUOUS:
        blocks.append((c, table[c][:, None]))
    if covariates is not None:
        blocks = [b for b in blocks if b[0] in covariates]
    # drop constant blocks (no variation in this sample)
    return [(n, X) for n, X in blocks if np.ptp(X, axis=0).max() > 0]


def _ols(Xd, d):
    n, k = Xd.shape
    Q, R = np.linalg.qr(Xd)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise np.linalg.LinAlgError("second-stage design is rank deficient")
    beta = np.linalg.solve(R, Q.T @ d)
    resid = d - Xd @ beta
    rss = float(resid @ resid)
    return beta, resid, rss


def ols_second_stage(table: LoanTable, y, kind: str, aic_selection: bool = False, y_df: int = 4,
                     covariates=None, y_spec: splines.SplineSpec | None = None) -> OlsSecondStage:
    """Linear-probability regression of funding on gender plus return rate and/or covariates.

    ``DI``: gender + ns(Y); ``DI_controls``: gender + ns(Y) + X; ``DT``:
    gender + X.  Covariates enter linearly, categoricals as level dummies.
    With ``aic_selection`` covariate blocks are removed one at a time while
    that lowers the AIC; gender and ns(Y) always stay.  Standard errors are
    heteroskedasticity-robust (HC1).
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    d = table.funded.astype(float)
    n = len(d)
    fixed = [np.ones((n, 1)), table.male.astype(float)[:, None]]
    fixed_names = ["intercept", "male"]
    if kind in ("DI", "DI_controls"):
        y = np.asarray(y, float)
        spec = y_spec or splines.make_spec(y, y_df)
        B = splines.evaluate(spec, y)
        fixed.append(B)
        fixed_names += [f"ns(Y)[{k}]" for k in range(B.shape[1])]
    blocks = _x_blocks(table, covariates) if kind in ("DI_controls", "DT") else []

    def fit(blks):
        Xd = np.hstack(fixed + [X for _, X in blks])
        beta, resid, rss = _ols(Xd, d)
        k = Xd.shape[1]
        aic = n * math.log(rss / n) + 2 * k
        return Xd, beta, resid, aic

    Xd, beta, resid, aic = fit(blocks)
    if aic_selection:
        while blocks:
            trials = [(fit(blocks[:j] + blocks[j + 1:])[3], j) for j in range(len(blocks))]
            best_aic, j = min(trials)
            if best_aic >= aic:
                break
            blocks = blocks[:j] + blocks[j + 1:]
            Xd, beta, resid, aic = fit(blocks)
    k = Xd.shape[1]
    XtX_inv = np.linalg.inv(Xd.T @ Xd)
    meat = (Xd * resid[:, None] ** 2).T @ Xd
    cov = XtX_inv @ meat @ XtX_inv * n / (n - k)
    se = float(math.sqrt(cov[1, 1]))
    z = stats.norm.ppf(0.975)
    names = fixed_names + [f"{name}[{j}]" if X.shape[1] > 1 else name for name, X in blocks
                           for j in range(X.shape[1])]
    return OlsSecondStage(kind, float(beta[1]), se, (float(beta[1] - z * se), float(beta[1] + z * se)),
                          [name for name, _ in blocks], names, beta, float(aic), n)


@dataclass
class Decomposition:
    di: OlsSecondStage
    di_controls: OlsSecondStage
    dt: OlsSecondStage

    @property
    def indirect_share(self) -> float:
        """Share of the gender effect explained by covariates: ``1 - DI_controls / DI``."""
        return 1.0 - self.di_controls.gender_coefficient / self.di.gender_coefficient

    @property
    def dt_underestimate(self) -> float:
        return 1.0 - self.dt.gender_coefficient / self.di.gender_coefficient

    @property
    def ordered(self) -> bool:
        a, b, c = (abs(m.gender_coefficient) for m in (self.dt, self.di_controls, self.di))
        return a < b < c

    def to_dict(self) -> dict:
        return {"DI": self.di.to_dict(), "DI_controls": self.di_controls.to_dict(), "DT": self.dt.to_dict(),
                "indirect_share": self.indirect_share, "dt_underestimate": self.dt_underestimate,
                "ordered_dt_lt_dic_lt_di": self.ordered}


def decompose(table: LoanTable, y, aic_selection: bool = False, y_df: int = 4) -> Decomposition:
    return Decomposition(*(ols_second_stage(table, y, k, aic_selection, y_df) for k in KINDS))


def share_from_coefficients(di: float, di_controls: float) -> float:
    return 1.0 - di_controls / di


# bootstrap ------------------------------------------------------------------------


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    n_bootstrap: int = 500
    seed: int = 0
    bins: tuple | None = None
    multiplier: float = 1.0
    threads: int = 1
    max_failure_rate: float = 0.10

    def __post_init__(self):
        if self.n_bootstrap < 2:
            raise ValueError("n_bootstrap must be at least 2")
        if self.multiplier < 1:
            raise ValueError("hazard multiplier must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be positive")


def percentile_ci(draws, axis=0, level=0.95):
    """Percentile interval rounded outward to order statistics, so two draws give (min, max)."""
    a = (1 - level) / 2 * 100
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo = np.nanpercentile(draws, a, axis=axis, method="lower")
        hi = np.nanpercentile(draws, 100 - a, axis=axis, method="higher")
    return lo, hi


def run_replicates(n_rep: int, func, threads: int = 1) -> list:
    """Evaluate ``func(i)`` for every replicate index; order of results is by index."""
    if threads <= 1:
        return [func(i) for i in range(n_rep)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(func, range(n_rep)))


@dataclass
class BootstrapResult:
    estimate: DiEstimate
    model: object
    imputed: Imputed
    extras: list = field(default_factory=list)
    point_extra: object = None


def bootstrap_di(table: LoanTable, config: BootstrapConfig, design: DesignConfig | None = None,
                 model=None, extra=None) -> BootstrapResult:
    """Two-stage bootstrap of the binned DI.

    Replicate ``i`` resamples loans with replacement, refits the hazard model
    (knots and levels fixed from the full-data fit, warm-started at its
    coefficients), re-imputes once and re-estimates.  Every replicate draws
    from its own stream ``(seed, BOOTSTRAP, i)``.  ``extra(table, imputed)``
    may compute additional statistics per replicate (returned in order).
    """
    edges = parse_bins(config.bins)
    funded = table.take(np.flatnonzero(table.funded))
    if model is None:
        model = cox.fit(funded, design or DesignConfig())
    imp = impute_returns(model, table, rngmod.stream(config.seed, rngmod.IMPUTE, 0), config.multiplier)
    point = nonparametric_di(imp.y, table.funded, table.male, edges)
    point_extra = extra(table, imp) if extra else None
    n = len(table)

    def one(i):
        g = rngmod.stream(config.seed, rngmod.BOOTSTRAP, i)
        idx = g.integers(0, n, n)
        tb = table.take(idx)
        try:
            m = cox.fit(tb.take(np.flatnonzero(tb.funded)), model.design, init=model.beta,
                        compute_concordance=False, robust=False)
            ib = impute_returns(m, tb, g, config.multiplier)
            est = nonparametric_di(ib.y, tb.funded, tb.male, edges)
        except (cox.FitError, np.linalg.LinAlgError, ValueError):
            return None
        return est.average_di, est.per_bin_di, (extra(tb, ib) if extra else None)

    results = run_replicates(config.n_bootstrap, one, config.threads)
    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    if failures > config.max_failure_rate * config.n_bootstrap:
        raise BootstrapError(f"{failures} of {config.n_bootstrap} bootstrap replicates failed")
    avg = np.array([r[0] for r in ok])
    per = np.array([r[1] for r in ok])
    lo, hi = percentile_ci(avg)
    plo, phi = percentile_ci(per)
    point.average_ci = (float(lo), float(hi))
    point.per_bin_ci = np.column_stack([plo, phi])
    point.n_bootstrap = len(ok)
    point.failures = failures
    point.replicates = avg
    return BootstrapResult(point, model, imp, [r[2] for r in ok], point_extra)


# subsets --------------------------------------------------------------------------


_OPS = {ast.Eq: operator.eq, ast.NotEq: operator.ne, ast.Lt: operator.lt, ast.LtE: operator.le,
        ast.Gt: operator.gt, ast.GtE: operator.ge, ast.Add: operator.add, ast.Sub: operator.sub,
        ast.Mult: operator.mul, ast.Div: operator.truediv, ast.BitAnd: operator.and_,
        ast.BitOr: operator.or_}


def subset_mask(table: LoanTable, expr: str) -> np.ndarray:
    """Evaluate a filter such as ``employment == 1`` or ``rate >= 0.3 and age < 30``.

    Only column names, numbers, comparisons, arithmetic and boolean
    connectives are allowed; ``all`` selects every loan.
    """
    expr = expr.strip()
    if expr == "all":
        return np.ones(len(table), bool)
    names = {"male": table.male.astype(float), "funded": table.funded}
    names.update(table.columns)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ValueError(f"unknown column {node.id!r} in subset expression")
            return names[node.id]
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, (ast.Not, ast.Invert)):
                return ~np.asarray(ev(node.operand), bool)
            if isinstance(node.op, ast.USub):
                return -ev(node.operand)
        if isinstance(node, ast.BoolOp):
            vals = [np.asarray(ev(v), bool) for v in node.values]
            out = vals[0]
            for v in vals[1:]:
                out = (out & v) if isinstance(node.op, ast.And) else (out | v)
            return out
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            left, right = ev(node.left), ev(node.right)
            if isinstance(node.op, (ast.BitAnd, ast.BitOr)):
                left, right = np.asarray(left, bool), np.asarray(right, bool)
            return _OPS[type(node.op)](left, right)
        if isinstance(node, ast.Compare):
            left = ev(node.left)
            out = None
            for op, comp in zip(node.ops, node.comparators):
                if type(op) not in _OPS:
                    raise ValueError("unsupported comparison in subset expression")
                right = ev(comp)
                r = _OPS[type(op)](left, right)
                out = r if out is None else (out & r)
                left = right
            return out
        raise ValueError(f"unsupported syntax in subset expression: {ast.dump(node)[:40]}")

    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as e:
        raise ValueError(f"cannot parse subset expression {expr!r}") from e
    mask = np.broadcast_to(np.asarray(ev(tree), bool), (len(table),))
    return np.array(mask)


def parse_subset(arg: str) -> tuple[str, str]:
    """``name=expr`` as used on the command line."""
    if "=" not in arg or arg.index("=") == 0:
        raise ValueError(f"subset must look like name=expr, got {arg!r}")
    name, expr = arg.split("=", 1)
    if expr.startswith("="):
        raise ValueError(f"subset must look like name=expr, got {arg!r}")
    return name.strip(), expr.strip()


def disaggregate_di(table: LoanTable, y, partition: dict, bins=None) -> dict:
    """DI per named subset from one set of completed return rates; ``None`` when a
    subset lacks either gender."""
    out = {}
    for name, sel in partition.items():
        mask = subset_mask(table, sel) if isinstance(sel, str) else np.asarray(sel, bool)
        male = table.male[mask]
        if mask.sum() == 0 or male.all() or (~male.astype(bool)).all():
            out[name] = None
            continue
        out[name] = nonparametric_di(np.asarray(y)[mask], table.funded[mask], male, bins)
    return out


# sensitivity ----------------------------------------------------------------------


@dataclass
class SensitivityResult:
    multipliers: np.ndarray
    average_di: np.ndarray
    slope: float | None
    intercept: float | None
    r_squared: float | None
    root: float | None

    def to_dict(self) -> dict:
        return {"multipliers": self.multipliers.tolist(), "average_di": self.average_di.tolist(),
                "slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "root": self.root}


def linear_extrapolation(x, y):
    """Least-squares line through ``(x, y)``: slope, intercept, R^2 and zero crossing."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) < 2:
        return None, None, None, None
    slope, intercept = np.polyfit(x, y, 1)
    fit = intercept + slope * x
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - ((y - fit) ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    root = -intercept / slope if slope != 0 else None
    return float(slope), float(intercept), float(r2), None if root is None else float(root)


def sensitivity_sweep(model, table: LoanTable, multipliers=DEFAULT_MULTIPLIERS, seed: int = 0,
                      bins=None) -> SensitivityResult:
    """Average DI when unfunded loans' hazards are scaled by each multiplier.

    All multipliers share one block of uniforms, so differences reflect the
    multiplier rather than fresh imputation noise.
    """
    mults = np.asarray(sorted(multipliers), float)
    if (mults < 1).any():
        raise ValueError("multipliers must be at least 1")
    U = rngmod.stream(seed, rngmod.SENSITIVITY, 0).random((len(table), TERM))
    di = np.array([nonparametric_di(impute_returns(model, table, multiplier=m, uniforms=U).y,
                                    table.funded, table.male, bins).average_di for m in mults])
    slope, intercept, r2, root = linear_extrapolation(mults, di)
    return SensitivityResult(mults, di, slope, intercept, r2, root)
