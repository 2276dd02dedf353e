"""Independent brute-force reference implementations used by the tests."""

import math

import numpy as np

from p2pdi.data_model import TERM


def episode_rows(X, last, event, F, S):
    """Explicit counting-process expansion: one row per loan per month at risk."""
    rows = []
    for i in range(len(last)):
        for m in range(int(last[i]) + 1):
            z = list(X[i]) + [X[i, s] * F[m, k] for s in S for k in range(F.shape[1])]
            rows.append((m, bool(event[i]) and m == last[i], np.array(z)))
    return rows


def efron_loglik(rows, beta):
    """Efron partial log-likelihood by direct risk-set enumeration."""
    ll = 0.0
    for m in range(TERM):
        risk = [z for (mm, _, z) in rows if mm == m]
        dead = [z for (mm, e, z) in rows if mm == m and e]
        d = len(dead)
        if d == 0:
            continue
        r_sum = sum(math.exp(float(z @ beta)) for z in risk)
        d_sum = sum(math.exp(float(z @ beta)) for z in dead)
        for z in dead:
            ll += float(z @ beta)
        for l in range(d):
            ll -= math.log(r_sum - l / d * d_sum)
    return ll


def breslow_untied(times, events, x, beta):
    """Classic untied Cox partial likelihood for scalar covariate."""
    ll = 0.0
    for i in range(len(times)):
        if events[i]:
            risk = [j for j in range(len(times)) if times[j] >= times[i]]
            ll += beta * x[i] - math.log(sum(math.exp(beta * x[j]) for j in risk))
    return ll


def harrell_pairs(time, event, risk):
    """Harrell's C by explicit enumeration of ordered pairs."""
    num = den = 0.0
    n = len(time)
    for i in range(n):
        for j in range(n):
            if event[i] and time[i] < time[j]:
                den += 1
                if risk[i] > risk[j]:
                    num += 1
                elif risk[i] == risk[j]:
                    num += 0.5
    return num / den
