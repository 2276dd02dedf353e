"""Covariate expansion shared by the hazard model and the OLS second stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import splines
from .data_model import BINARY, CATEGORICAL, CONTINUOUS, TERM, LoanTable


@dataclass(frozen=True)
class DesignConfig:
    """Which covariates enter and how.

    ``time_interactions`` lists covariates whose columns are also multiplied
    by the natural-spline basis of the month.  An empty ``spline_df`` entry
    falls back to ``default_df``; a df of 1 enters the covariate linearly.
    """

    binary: tuple[str, ...] = ("male",) + BINARY
    categorical: tuple[str, ...] = CATEGORICAL
    continuous: tuple[str, ...] = CONTINUOUS
    default_df: int = 4
    spline_df: dict[str, int] = field(default_factory=dict)
    time_df: int = 3
    time_interactions: tuple[str, ...] = ("male",)

    def df_for(self, name: str) -> int:
        return int(self.spline_df.get(name, self.default_df))

    def to_dict(self) -> dict:
        return {
            "binary": list(self.binary), "categorical": list(self.categorical),
            "continuous": list(self.continuous), "default_df": self.default_df,
            "spline_df": dict(self.spline_df), "time_df": self.time_df,
            "time_interactions": list(self.time_interactions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignConfig":
        return cls(tuple(d["binary"]), tuple(d["categorical"]), tuple(d["continuous"]),
                   int(d["default_df"]), dict(d["spline_df"]), int(d["time_df"]),
                   tuple(d["time_interactions"]))


@dataclass(frozen=True)
class Design:
    """A :class:`DesignConfig` with knots and category levels fixed from data."""

    config: DesignConfig
    levels: dict[str, tuple[int, ...]]
    specs: dict[str, splines.SplineSpec]
    time_spec: splines.SplineSpec | None

    @classmethod
    def build(cls, config: DesignConfig, table: LoanTable) -> "Design":
        levels = {}
        for c in config.categorical:
            vals = np.unique(table[c]).astype(int)
            levels[c] = tuple(int(v) for v in vals if v != 0)
        specs = {}
        for c in config.continuous:
            # k distinct values support at most k - 1 columns besides the constant
            df = min(config.df_for(c), len(np.unique(table[c])) - 1)
            if df >= 2:
                specs[c] = splines.make_spec(table[c], df)
        time_spec = None
        if config.time_interactions:
            if config.time_df < 2:
                raise ValueError("time_df must be at least 2 when time interactions are requested")
            time_spec = splines.make_spec(np.arange(TERM), config.time_df, center=0.0)
        return cls(config, levels, specs, time_spec)

    # layout ------------------------------------------------------------------

    def blocks(self) -> list[tuple[str, list[str]]]:
        """Covariate name with the names of its design columns, in column order."""
        out = []
        for b in self.config.binary:
            out.append((b, [b]))
        for c in self.config.categorical:
            out.append((c, [f"{c}:{lev}" for lev in self.levels[c]]))
        for c in self.config.continuous:
            if c in self.specs:
                out.append((c, [f"ns({c})[{k}]" for k in range(self.specs[c].degrees_of_freedom)]))
            else:
                out.append((c, [c]))
        return [(name, cols) for name, cols in out if cols]

    @property
    def main_names(self) -> list[str]:
        return [c for _, cols in self.blocks() for c in cols]

    @property
    def interaction_index(self) -> np.ndarray:
        idx, pos = [], 0
        for name, cols in self.blocks():
            if name in self.config.time_interactions:
                idx.extend(range(pos, pos + len(cols)))
            pos += len(cols)
        return np.array(idx, dtype=int)

    @property
    def time_basis(self) -> np.ndarray:
        """``(12, K)`` natural-spline basis of the month, K = 0 without interactions."""
        if self.time_spec is None:
            return np.zeros((TERM, 0))
        return splines.evaluate(self.time_spec, np.arange(TERM, dtype=float))

    @property
    def names(self) -> list[str]:
        main = self.main_names
        F = self.time_basis
        inter = [f"{main[j]}*ns(t)[{k}]" for j in self.interaction_index for k in range(F.shape[1])]
        return main + inter

    def block_slices(self) -> dict[str, np.ndarray]:
        """Parameter indices (main and interaction) belonging to each covariate."""
        out, pos = {}, 0
        p = len(self.main_names)
        K = self.time_basis.shape[1]
        S = list(self.interaction_index)
        for name, cols in self.blocks():
            idx = list(range(pos, pos + len(cols)))
            for j in list(idx):
                if j in S:
                    s = S.index(j)
                    idx.extend(p + s * K + k for k in range(K))
            out[name] = np.array(idx, dtype=int)
            pos += len(cols)
        return out

    # evaluation --------------------------------------------------------------

    def matrix(self, table: LoanTable) -> np.ndarray:
        cols = []
        for b in self.config.binary:
            cols.append(np.asarray(table[b], dtype=float)[:, None])
        for c in self.config.categorical:
            x = table[c]
            for lev in self.levels[c]:
                cols.append((x == lev).astype(float)[:, None])
        for c in self.config.continuous:
            if c in self.specs:
                cols.append(splines.evaluate(self.specs[c], table[c]))
            else:
                cols.append(np.asarray(table[c], dtype=float)[:, None])
        cols = [c for c in cols if c.shape[1]]
        if not cols:
            return np.zeros((len(table), 0))
        return np.hstack(cols)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "levels": {k: list(v) for k, v in self.levels.items()},
            "specs": {k: v.to_dict() for k, v in self.specs.items()},
            "time_spec": None if self.time_spec is None else self.time_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Design":
        return cls(DesignConfig.from_dict(d["config"]),
                   {k: tuple(v) for k, v in d["levels"].items()},
                   {k: splines.SplineSpec.from_dict(v) for k, v in d["specs"].items()},
                   None if d["time_spec"] is None else splines.SplineSpec.from_dict(d["time_spec"]))
