"""Natural cubic spline basis (truncated-power construction).

With boundary knots ``a < b`` and interior knots ``k_1 < ... < k_m`` the basis
has ``m + 1`` columns: the identity plus ``m`` differences of truncated cubes
whose cubic and quadratic terms cancel beyond the boundary, so every function
in the span is linear outside ``[a, b]``.  Columns are shifted so that the
basis vanishes at ``center``; a covariate at its center value therefore
contributes nothing to a linear predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineSpec:
    knots: tuple[float, ...]
    boundary: tuple[float, float]
    center: float

    def __post_init__(self):
        lo, hi = self.boundary
        pts = (lo,) + tuple(self.knots) + (hi,)
        if not all(a < b for a, b in zip(pts, pts[1:])):
            raise ValueError(f"knots must be strictly increasing inside the boundary: {pts}")

    @property
    def degrees_of_freedom(self) -> int:
        return len(self.knots) + 1

    def to_dict(self) -> dict:
        return {"knots": list(self.knots), "boundary": list(self.boundary), "center": self.center}

    @classmethod
    def from_dict(cls, d: dict) -> "SplineSpec":
        return cls(tuple(d["knots"]), tuple(d["boundary"]), float(d["center"]))


def make_spec(values, df: int, center: float | None = None) -> SplineSpec:
    """Knots at equally spaced quantiles of ``values``, boundary at min/max.

    Heavily tied data (counts with a mass at zero) can produce coincident
    quantiles; the knots are then placed at quantiles of the distinct values.
    """
    if df < 2:
        raise ValueError("df must be at least 2")
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    distinct = np.unique(x)
    if len(distinct) < df:
        raise ValueError(f"cannot place knots: {len(distinct)} distinct values for df={df}")
    lo, hi = float(distinct[0]), float(distinct[-1])
    probs = np.arange(1, df) / df
    knots = np.quantile(x, probs)
    pts = np.concatenate([[lo], knots, [hi]])
    if not np.all(np.diff(pts) > 0):
        knots = np.quantile(distinct, probs)
    if center is None:
        center = float(np.median(x))
    return SplineSpec(tuple(float(k) for k in knots), (lo, hi), float(center))


def _raw_basis(spec: SplineSpec, x: np.ndarray) -> np.ndarray:
    lo, hi = spec.boundary
    scale = hi - lo
    u = (x - lo) / scale
    xi = (np.asarray(spec.knots) - lo) / scale
    all_knots = np.concatenate([[0.0], xi, [1.0]])
    last = all_knots[-1]

    def d(j):
        return (np.maximum(u - all_knots[j], 0.0) ** 3 - np.maximum(u - last, 0.0) ** 3) / (last - all_knots[j])

    K = len(all_knots)
    cols = [u]
    d_last = d(K - 2)
    for j in range(K - 2):
        cols.append(d(j) - d_last)
    return np.column_stack(cols)


def evaluate(spec: SplineSpec, x) -> np.ndarray:
    """Basis values; shape ``(df,)`` for a scalar, ``(n, df)`` for an array."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    B = _raw_basis(spec, np.atleast_1d(arr)) - _raw_basis(spec, np.array([spec.center]))
    return B[0] if scalar else B
