"""Bayesian threshold test on funding decisions.

Investors see ``lambda + sigma1 * eps``, form the posterior mean
``(1 - gamma) mu + gamma * signal`` and fund when its product with ``1 + R``
reaches the threshold ``pi``.  Given the repayment ratio the funding
probability is ``Phi(a lam - a (pi/gamma) / (1 + R) + a (1/gamma - 1) mu)``
with ``a = 1/sigma1``.  With ``mu`` and ``sigma0`` plugged in per gender,
``(a, pi)`` are sampled under half-normal priors by adaptive random-walk
Metropolis on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import rng as rngmod
from .data_model import TERM

GENDERS = ("f", "m")
PARAMS = ("inv_sigma1", "pi")
PRIOR_SCALE = 2.0


def signal_reliability(sigma0: float, sigma1: float) -> float:
    if sigma1 == 0:
        return 1.0
    if sigma0 == 0:
        return 0.0
    return sigma1 ** -2 / (sigma0 ** -2 + sigma1 ** -2)


@dataclass(frozen=True)
class DecisionParams:
    mu: float
    sigma0: float
    sigma1: float
    pi: float

    def __post_init__(self):
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise ValueError("scale parameters must be non-negative")

    @property
    def gamma(self) -> float:
        return signal_reliability(self.sigma0, self.sigma1)

    def coefficients(self) -> tuple[float, float, float]:
        """``(c_lam, c_R, c_0)`` of the probit index ``c_lam lam + c_R / (1 + R) + c_0``."""
        a = 1.0 / self.sigma1
        g = self.gamma
        return a, -a * self.pi / g, a * (1.0 / g - 1.0) * self.mu

    @classmethod
    def from_coefficients(cls, c_lam, c_R, c_0, mu, sigma0) -> "DecisionParams":
        a = c_lam
        g = signal_reliability(sigma0, 1.0 / a)
        return cls(mu, sigma0, 1.0 / a, -c_R * g / a)


def success_probability(lam, rate, params: DecisionParams):
    """Funding probability given the repayment ratio and interest rate."""
    lam = np.asarray(lam, float)
    rate = np.asarray(rate, float)
    if params.sigma1 == 0:
        return (lam * (1 + rate) >= params.pi).astype(float)
    c1, c2, c0 = params.coefficients()
    return special.ndtr(c1 * lam + c2 / (1 + rate) + c0)


def moments(lam, male) -> dict:
    """Mean and standard deviation (population form) of the repayment ratio per gender."""
    lam = np.asarray(lam, float)
    male = np.asarray(male).astype(bool)
    if male.all() or (~male).all():
        raise ValueError("both genders must be present")
    out = {}
    for g, sel in (("f", ~male), ("m", male)):
        out[g] = (float(lam[sel].mean()), float(lam[sel].std()))
    return out


@dataclass
class CollapsedTable:
    male: np.ndarray
    lam: np.ndarray
    rate: np.ndarray
    n: np.ndarray
    k: np.ndarray

    def for_gender(self, g: str) -> "CollapsedTable":
        sel = self.male == (g == "m")
        return CollapsedTable(self.male[sel], self.lam[sel], self.rate[sel], self.n[sel], self.k[sel])

    def __len__(self):
        return len(self.n)

    def rows(self) -> list[dict]:
        return [{"gender": "m" if self.male[i] else "f", "lam": float(self.lam[i]), "rate": float(self.rate[i]),
                 "n_trials": int(self.n[i]), "n_successes": int(self.k[i])} for i in range(len(self.n))]


def collapse_binomial(lam, rate, funded, male) -> CollapsedTable:
    """Group loans into Binomial cells by (gender, repayment ratio, rate)."""
    lam = np.asarray(lam, float)
    rate = np.asarray(rate, float)
    funded = np.asarray(funded, bool)
    male = np.asarray(male).astype(np.int64)
    if len(lam) == 0:
        e = np.zeros(0)
        return CollapsedTable(e.astype(bool), e, e, e.astype(int), e.astype(int))
    keys = np.column_stack([male, lam, rate])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    n = np.bincount(inv, minlength=len(uniq))
    k = np.bincount(inv, weights=funded, minlength=len(uniq)).astype(np.int64)
    return CollapsedTable(uniq[:, 0].astype(bool), uniq[:, 1], uniq[:, 2], n, k)


def _index(a, pi, lam, rate, mu, sigma0):
    # a/gamma = a + 1/(sigma0^2 a); a (1/gamma - 1) mu = mu / (sigma0^2 a)
    s2 = sigma0 * sigma0
    return a * lam - (a + 1.0 / (s2 * a)) * pi / (1 + rate) + mu / (s2 * a)


def loglik(a, pi, table: CollapsedTable, mu, sigma0) -> float:
    """Parameter-dependent Binomial log-likelihood (no binomial coefficients)."""
    if len(table) == 0:
        return 0.0
    z = _index(a, pi, table.lam, table.rate, mu, sigma0)
    return float(np.sum(table.k * special.log_ndtr(z) + (table.n - table.k) * special.log_ndtr(-z)))


def loglik_bernoulli(a, pi, lam, rate, funded, mu, sigma0) -> float:
    z = _index(a, pi, np.asarray(lam, float), np.asarray(rate, float), mu, sigma0)
    funded = np.asarray(funded, bool)
    return float(np.sum(np.where(funded, special.log_ndtr(z), special.log_ndtr(-z))))


def loglik_grad(a, pi, table: CollapsedTable, mu, sigma0) -> np.ndarray:
    s2 = sigma0 * sigma0
    z = _index(a, pi, table.lam, table.rate, mu, sigma0)
    # d log Phi(z) / dz = phi(z)/Phi(z) computed in log space
    lphi = -0.5 * z * z - 0.5 * math.log(2 * math.pi)
    dz = table.k * np.exp(lphi - special.log_ndtr(z)) - (table.n - table.k) * np.exp(lphi - special.log_ndtr(-z))
    dz_da = table.lam - (1 - 1 / (s2 * a * a)) * pi / (1 + table.rate) - mu / (s2 * a * a)
    dz_dpi = -(a + 1 / (s2 * a)) / (1 + table.rate)
    return np.array([np.sum(dz * dz_da), np.sum(dz * dz_dpi)])


def log_prior(theta) -> float:
    """Half-normal(0, 2) on each positive parameter (up to a constant)."""
    theta = np.asarray(theta)
    if (theta <= 0).any():
        return -np.inf
    return float(-0.5 * np.sum((theta / PRIOR_SCALE) ** 2))


def log_post_logscale(phi, table, mu, sigma0) -> float:
    """Log posterior of ``phi = log(a, pi)`` including the Jacobian."""
    theta = np.exp(phi)
    return log_prior(theta) + loglik(theta[0], theta[1], table, mu, sigma0) + float(np.sum(phi))


# diagnostics ------------------------------------------------------------------------


def split_rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction for ``(n_chains, n_draws)``."""
    chains = np.asarray(chains, float)
    m, n = chains.shape
    if m < 2 and n < 4:
        raise ValueError("need at least two chains (or split halves)")
    half = n // 2
    parts = np.vstack([chains[:, :half], chains[:, n - half:]])
    n = half
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def ess(chains: np.ndarray) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    chains = np.asarray(chains, float)
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    centered = chains - chains.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, n=2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    B_over_n = chains.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B_over_n
    if var_plus <= 0:
        return float(m * n)
    rho = 1 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at first negative, made monotone
    t = 0
    total = 0.0
    prev = math.inf
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        p = min(p, prev)
        total += p
        prev = p
        t += 2
    tau = -1 + 2 * total
    tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 10 else max(tau, 1e-3)
    return float(m * n / tau)


# sampler ------------------------------------------------------------------------------


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    warmup: int = 5000
    draws: int = 5000
    max_draws: int = 20000
    seed: int = 0
    rhat_max: float = 1.01
    ess_min: float = 400.0
    threads: int = 1

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("at least two chains are required")
        if self.warmup < 100 or self.draws < 100:
            raise ValueError("warmup and draws must be at least 100")
        if self.max_draws < self.draws:
            raise ValueError("max_draws must be at least draws")


class McmcConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _find_mode(table, mu, sigma0):
    def nlp(phi):
        v = log_post_logscale(phi, table, mu, sigma0)
        return -v if np.isfinite(v) else 1e300

    best = None
    for start in ([0.0, 0.0], [1.0, 0.0], [-1.0, 0.5], [0.5, 0.1]):
        r = optimize.minimize(nlp, start, method="Nelder-Mead",
                              options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if best is None or r.fun < best.fun:
            best = r
    x = best.x
    # numerical Hessian for the proposal scale
    h = 1e-4
    Hm = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
            Hm[i, j] = (nlp(x + ei + ej) - nlp(x + ei - ej) - nlp(x - ei + ej) + nlp(x - ei - ej)) / (4 * h * h)
    try:
        cov = np.linalg.inv(Hm)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.eye(2) * 0.1
    return x, cov


def _chain(table, mu, sigma0, start, cov, warmup, draws, g):
    d = 2
    scale = 2.38 ** 2 / d
    L = np.linalg.cholesky(cov * scale)
    phi = np.array(start, float)
    lp = log_post_logscale(phi, table, mu, sigma0)
    out = np.empty((draws, d))
    accepted_w = accepted = 0
    hist = []
    for it in range(warmup + draws):
        prop = phi + L @ g.standard_normal(d)
        lp_new = log_post_logscale(prop, table, mu, sigma0)
        if np.log(g.random()) < lp_new - lp:
            phi, lp = prop, lp_new
            if it < warmup:
                accepted_w += 1
            else:
                accepted += 1
        if it < warmup:
            hist.append(phi.copy())
            # adapt every 100 iterations: covariance of the recent half, scale toward 0.3 acceptance
            if (it + 1) % 100 == 0:
                rate = accepted_w / 100
                accepted_w = 0
                scale *= math.exp(rate - 0.3)
                recent = np.array(hist[len(hist) // 2:])
                emp = np.cov(recent.T) if len(recent) > 10 else cov
                emp = emp + 1e-10 * np.eye(d)
                try:
                    L = np.linalg.cholesky(emp * scale)
                except np.linalg.LinAlgError:
                    L = np.linalg.cholesky(cov * scale)
        else:
            out[it - warmup] = phi
    return np.exp(out), accepted / draws


@dataclass
class ThresholdPosterior:
    """Posterior draws of ``(1/sigma1, pi)`` per gender, shape ``(chains, draws, 2)``."""

    draws: dict
    mu: dict
    sigma0: dict
    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)

    def flat(self, g: str) -> np.ndarray:
        d = self.draws[g]
        return d.reshape(-1, d.shape[-1])

    def derived(self, g: str) -> dict:
        x = self.flat(g)
        a, pi = x[:, 0], x[:, 1]
        s0 = self.sigma0[g]
        sigma1 = 1.0 / a
        gamma = sigma1 ** -2 / (s0 ** -2 + sigma1 ** -2)
        return {"inv_sigma1": a, "sigma1": sigma1, "gamma": gamma, "pi": pi}

    def summary(self) -> dict:
        out = {}
        for g in GENDERS:
            if g not in self.draws:
                continue
            rows = {"mu": {"mean": self.mu[g]}, "sigma0": {"mean": self.sigma0[g]}}
            for name, v in self.derived(g).items():
                lo, hi = np.percentile(v, [2.5, 97.5])
                rows[name] = {"mean": float(v.mean()), "sd": float(v.std(ddof=1)),
                              "ci": [float(lo), float(hi)]}
            rows["rhat"] = self.rhat.get(g, {})
            rows["ess"] = self.ess.get(g, {})
            rows["acceptance"] = self.acceptance.get(g, [])
            out[g] = rows
        if set(GENDERS) <= set(self.draws):
            out["p_pi_f_gt_pi_m"] = self.prob_pi_f_greater()
        return out

    def prob_pi_f_greater(self) -> float:
        f, m = self.flat("f")[:, 1], self.flat("m")[:, 1]
        k = min(len(f), len(m))
        return float(np.mean(f[:k] > m[:k]))

    @property
    def max_rhat(self) -> float:
        return max(v for g in self.rhat.values() for v in g.values())

    @property
    def min_ess(self) -> float:
        return min(v for g in self.ess.values() for v in g.values())

    def trace_rows(self) -> list[dict]:
        rows = []
        for g in GENDERS:
            if g not in self.draws:
                continue
            d = self.draws[g]
            for c in range(d.shape[0]):
                for i in range(d.shape[1]):
                    rows.append({"gender": g, "chain": c, "iteration": i,
                                 "inv_sigma1": d[c, i, 0], "pi": d[c, i, 1]})
        return rows


def _diagnose(draws):
    r = {p: split_rhat(draws[:, :, j]) for j, p in enumerate(PARAMS)}
    e = {p: ess(draws[:, :, j]) for j, p in enumerate(PARAMS)}
    return r, e


def infer(table: CollapsedTable, mom: dict, config: McmcConfig = McmcConfig()) -> ThresholdPosterior:
    """Sample ``(1/sigma1_g, pi_g)`` for each gender independently.

    Chains start from overdispersed points around the posterior mode and
    adapt their proposal during warmup only.  If r-hat or ESS misses the
    target, draws are doubled (fresh chains) up to ``max_draws``; beyond that
    :class:`McmcConvergenceError` is raised.
    """
    from .di import run_replicates
    post = ThresholdPosterior({}, {g: mom[g][0] for g in GENDERS}, {g: mom[g][1] for g in GENDERS})
    for gi, g in enumerate(GENDERS):
        sub = table.for_gender(g)
        mu, s0 = mom[g]
        if s0 <= 0:
            raise ValueError(f"sigma0 for {g} must be positive")
        mode, cov = _find_mode(sub, mu, s0)
        n_draws, attempt = config.draws, 0
        while True:
            def run(c, n_draws=n_draws, attempt=attempt):
                gen = rngmod.stream(config.seed, rngmod.MCMC, gi, attempt, c)
                start = mode + 2.0 * np.linalg.cholesky(cov) @ gen.standard_normal(2)
                return _chain(sub, mu, s0, start, cov, config.warmup, n_draws, gen)

            res = run_replicates(config.chains, run, config.threads)
            draws = np.stack([r[0] for r in res])
            rh, es = _diagnose(draws)
            ok = max(rh.values()) <= config.rhat_max and min(es.values()) >= config.ess_min
            if ok or n_draws * 2 > config.max_draws:
                break
            n_draws *= 2
            attempt += 1
        post.draws[g] = draws
        post.rhat[g] = rh
        post.ess[g] = es
        post.acceptance[g] = [float(r[1]) for r in res]
        if not ok:
            raise McmcConvergenceError(
                f"sampler for {g} did not converge: rhat={rh}, ess={es}",
                {"gender": g, "rhat": rh, "ess": es, "acceptance": post.acceptance[g]})
    return post


def pool_posteriors(posteriors: list) -> ThresholdPosterior:
    """Uniform mixture of replicate posteriors (equal draws per replicate)."""
    if not posteriors:
        raise ValueError("at least one posterior is required")
    if len(posteriors) == 1:
        return posteriors[0]
    out = ThresholdPosterior({}, {}, {})
    for g in GENDERS:
        flats = [p.flat(g) for p in posteriors]
        k = min(len(f) for f in flats)
        take = [f[np.linspace(0, len(f) - 1, k).round().astype(int)] for f in flats]
        out.draws[g] = np.concatenate(take)[None, :, :]
        out.mu[g] = float(np.mean([p.mu[g] for p in posteriors]))
        out.sigma0[g] = float(np.mean([p.sigma0[g] for p in posteriors]))
        out.rhat[g] = {p: max(q.rhat[g][p] for q in posteriors) for p in PARAMS}
        out.ess[g] = {p: float(sum(q.ess[g][p] for q in posteriors)) for p in PARAMS}
        out.acceptance[g] = [a for q in posteriors for a in q.acceptance[g]]
    return out


def half_normal_mean(scale: float = PRIOR_SCALE) -> float:
    return scale * math.sqrt(2 / math.pi)


def twelfths(lam) -> np.ndarray:
    """Round repayment ratios to the nearest twelfth (for collapsing)."""
    return np.round(np.asarray(lam, float) * TERM) / TERM

