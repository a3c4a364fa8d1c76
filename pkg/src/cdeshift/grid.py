"""Conditional densities sampled on a shared uniform grid over [0, 1].

A :class:`DensityGrid` holds one density (``values`` of shape ``(G,)``) or a
batch of densities (shape ``(n, G)``), one row per conditioning point.  All
integrals use the trapezoid rule on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_G = 200
NORMALIZE_FLOOR = 1e-12


class GridError(ValueError):
    pass


def uniform_grid(G: int = DEFAULT_G) -> np.ndarray:
    if G < 2:
        raise GridError("grid needs at least two knots")
    return np.linspace(0.0, 1.0, int(G))


def trapezoid_weights(grid) -> np.ndarray:
    h = np.diff(grid)
    w = np.zeros(len(grid))
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise GridError("grid must be a 1-D array of at least two knots")
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise GridError("grid must span [0, 1]")
    h = np.diff(grid)
    if np.any(h <= 0) or np.max(np.abs(h - 1.0 / (grid.size - 1))) > 1e-12:
        raise GridError("grid must be strictly increasing with uniform spacing")
    return grid


@dataclass(frozen=True, eq=False)
class DensityGrid:
    grid: np.ndarray
    values: np.ndarray
    normalized: bool = False
    fallback: np.ndarray | None = None

    def __post_init__(self):
        grid = check_grid(self.grid)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape[-1] != grid.size or vals.ndim not in (1, 2):
            raise GridError(f"values of shape {vals.shape} do not match a grid of {grid.size} knots")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)
        if self.fallback is None:
            object.__setattr__(self, "fallback", np.zeros(vals.shape[:-1], dtype=bool))

    @property
    def G(self) -> int:
        return self.grid.size

    @property
    def batched(self) -> bool:
        return self.values.ndim == 2

    def __len__(self):
        return self.values.shape[0] if self.batched else 1

    def row(self, i: int) -> "DensityGrid":
        if not self.batched:
            raise GridError("not a batch")
        return DensityGrid(self.grid, self.values[i], self.normalized, np.asarray(self.fallback[i]))

    def integral(self) -> np.ndarray:
        return self.values @ trapezoid_weights(self.grid)


def normalize(raw: DensityGrid) -> DensityGrid:
    """Clip negative values to zero and rescale to unit trapezoid integral.

    Rows whose clipped integral falls below 1e-12 are replaced by the uniform
    density and flagged in ``fallback``.
    """
    vals = np.asarray(raw.values, dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise GridError("cannot normalize non-finite density values")
    clipped = np.maximum(vals, 0.0)
    total = clipped @ trapezoid_weights(raw.grid)
    bad = total < NORMALIZE_FLOOR
    safe = np.where(bad, 1.0, total)
    out = clipped / np.expand_dims(safe, -1)
    out = np.where(np.expand_dims(bad, -1), 1.0, out)
    prev = np.zeros_like(bad) if raw.fallback is None else np.asarray(raw.fallback)
    return DensityGrid(raw.grid, out, True, np.asarray(bad | prev))


def _require_normalized(d: DensityGrid):
    if not d.normalized:
        raise GridError("operation requires a normalized density")


def cumulative(d: DensityGrid) -> np.ndarray:
    """Cumulative trapezoid integral at every knot (starts at 0)."""
    v = d.values
    h = np.diff(d.grid)
    steps = (v[..., 1:] + v[..., :-1]) * h / 2
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), np.cumsum(steps, axis=-1)], axis=-1)


def _interp_rows(knot_values, grid, z):
    """Linear interpolation of per-row knot values at one point per row."""
    G = grid.size
    h = 1.0 / (G - 1)
    z = np.clip(np.asarray(z, dtype=np.float64), 0.0, 1.0)
    i = np.minimum((z / h).astype(np.int64), G - 2)
    frac = (z - grid[i]) / h
    if knot_values.ndim == 1:
        return knot_values[i] + frac * (knot_values[i + 1] - knot_values[i])
    rows = np.arange(knot_values.shape[0])
    if np.ndim(z) == 0:
        i = np.full(knot_values.shape[0], i)
        frac = np.full(knot_values.shape[0], frac)
    return knot_values[rows, i] + frac * (knot_values[rows, i + 1] - knot_values[rows, i])


def value_at(d: DensityGrid, z) -> np.ndarray:
    """Density evaluated at ``z`` (one point per row) by linear interpolation."""
    return _interp_rows(d.values, d.grid, z)


def cdf(d: DensityGrid, z) -> np.ndarray:
    """Conditional CDF at ``z``: cumulative trapezoid, linear between knots."""
    _require_normalized(d)
    return np.clip(_interp_rows(cumulative(d), d.grid, z), 0.0, 1.0)


def _quantile_1d(C, grid, c):
    i = int(np.searchsorted(C, c, side="left"))
    if i == 0:
        return 0.0
    if i >= C.size:
        return 1.0
    lo, hi = C[i - 1], C[i]
    return float(grid[i - 1] + (c - lo) / (hi - lo) * (grid[i] - grid[i - 1]))


def quantile(d: DensityGrid, c) -> np.ndarray:
    """Generalized inverse of :func:`cdf`: smallest ``z`` with ``cdf(z) >= c``.

    ``c`` may be a scalar or an array of levels; for a batch the result has
    shape ``(n,)`` or ``(n, len(c))``.
    """
    _require_normalized(d)
    c_arr = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if np.any((c_arr <= 0) | (c_arr >= 1)):
        raise GridError("quantile levels must lie in (0, 1)")
    C = cumulative(d)
    C2 = C if C.ndim == 2 else C[None, :]
    out = np.empty((C2.shape[0], c_arr.size))
    for r in range(C2.shape[0]):
        for k, ck in enumerate(c_arr):
            out[r, k] = _quantile_1d(C2[r], d.grid, ck)
    if np.ndim(c) == 0:
        out = out[:, 0]
    return out if C.ndim == 2 else out[0]


def squared_integral(d: DensityGrid) -> np.ndarray:
    """Trapezoid integral of the squared density (per row)."""
    v = d.values
    if not np.all(np.isfinite(v)):
        raise GridError("non-finite density values")
    return (v * v) @ trapezoid_weights(d.grid)


def expected_functional(d: DensityGrid, g) -> np.ndarray:
    """Trapezoid integral of ``g(z) * f(z|x)`` for a tabulated ``g`` (per row)."""
    _require_normalized(d)
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != d.G:
        raise GridError(f"g has {g.shape[-1]} values, grid has {d.G}")
    if not np.all(np.isfinite(g)):
        raise GridError("g must be finite")
    return np.sum(d.values * g * trapezoid_weights(d.grid), axis=-1)


# -- catalog serialization ---------------------------------------------------


def write_catalog(d: DensityGrid, path) -> int:
    """Write densities: a ``G,z_min,z_max`` header then one row per density.

    Values are printed with 12 significant digits.
    """
    vals = d.values if d.batched else d.values[None, :]
    with Path(path).open("w") as fh:
        fh.write(f"{d.G},{d.grid[0]:.12g},{d.grid[-1]:.12g}\n")
        for row in vals:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
    return vals.shape[0]


def read_catalog(path) -> DensityGrid:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise GridError(f"{path}: empty catalog")
    G_s, lo_s, hi_s = lines[0].split(",")
    G = int(G_s)
    if float(lo_s) != 0.0 or float(hi_s) != 1.0:
        raise GridError(f"{path}: catalog grid must span [0, 1]")
    vals = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]]).reshape(-1, G)
    return DensityGrid(uniform_grid(G), vals, normalized=True)
