import numpy as np
import pytest

from p2pdi.data_model import ABSENT, CATEGORICAL, CONTINUOUS, BINARY, DEFAULTED, PAID, TERM, UNOBSERVED, LoanTable


def random_table(n, rng, funded=True, tau=None, censored=None):
    """Small loan table with random covariates and payment histories."""
    cols = {}
    for b in BINARY:
        cols[b] = rng.integers(0, 2, n)
    for c in CATEGORICAL:
        cols[c] = rng.integers(0, 3, n)
    for c in CONTINUOUS:
        cols[c] = rng.normal(size=n)
    cols["rate"] = rng.uniform(0.16, 0.36, n)
    male = rng.integers(0, 2, n)
    if tau is None:
        tau = rng.integers(0, TERM + 1, n)
    if censored is None:
        censored = (tau == TERM) | (rng.random(n) < 0.2)
    pay = np.full((n, TERM), ABSENT if not funded else PAID, dtype=np.int8)
    if funded:
        for i in range(n):
            t = int(tau[i])
            if t < TERM:
                pay[i, t:] = UNOBSERVED if censored[i] else DEFAULTED
    return LoanTable([f"L{i}" for i in range(n)], male, np.full(n, funded), pay, cols)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
