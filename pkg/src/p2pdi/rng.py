"""Counter-based random stream splitting.

Every stochastic step draws from ``stream(master_seed, purpose, index...)``,
a generator seeded by ``SeedSequence(master_seed, spawn_key=(purpose, *index))``.
Streams depend only on the master seed and the integer keys, never on the
order in which workers run, so results do not change with ``--threads``.
"""

from __future__ import annotations

import numpy as np

GENERATE = 1
IMPUTE = 2
BOOTSTRAP = 3
MCMC = 4
SENSITIVITY = 5
DIAGNOSTICS = 6


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    if master_seed is None:
        raise ValueError("a master seed is required for stochastic steps")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Child integer seed, for handing to code that wants a plain seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
