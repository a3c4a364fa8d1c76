"""Goodness-of-fit diagnostics for conditional density estimates.

Q-Q curve, PIT values with a Kolmogorov-Smirnov p-value, HPD regions on the
grid, and the HPD coverage curve.  Weighted diagnostics are self-normalized
by the weight total unless ``self_normalize=False``, which divides by ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .grid import DensityGrid, cdf, quantile
from .losses import densities
from .weights import effective_sample_size

Z95 = 1.959963984540054


class DiagnosticError(ValueError):
    pass


def _weights(sample: Sample, weights):
    if weights is None:
        weights = sample.weights if sample.weights is not None else np.ones(sample.n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (sample.n,) or np.any(w < 0):
        raise DiagnosticError("weights must be one nonnegative value per row")
    if not np.any(w > 0):
        raise DiagnosticError("weights are all zero")
    return w


def _weighted_rate(indicators, w, self_normalize):
    denom = w.sum() if self_normalize else w.size
    return (w @ indicators) / denom


def qq_curve(predictor, labeled_test: Sample, c_grid=None, weights=None, self_normalize=True):
    """``[(c, c_hat)]`` where ``c_hat`` is the weighted share of ``z_i <= Q_i(c)``."""
    if c_grid is None:
        c_grid = np.linspace(0.05, 0.95, 19)
    c_grid = np.asarray(c_grid, dtype=np.float64)
    if labeled_test.response is None:
        raise DiagnosticError("Q-Q curve needs responses")
    w = _weights(labeled_test, weights)
    d = densities(predictor, labeled_test.covariates)
    Q = quantile(d, c_grid)  # (n, len(c))
    ind = (labeled_test.response[:, None] <= Q).astype(float)
    chat = _weighted_rate(ind, w, self_normalize)
    return [(float(c), float(ch)) for c, ch in zip(c_grid, chat)]


def pit_values(predictor, labeled_test: Sample) -> np.ndarray:
    d = densities(predictor, labeled_test.covariates)
    return cdf(d, labeled_test.response)


def kolmogorov_pvalue(D: float, n: int) -> float:
    """Asymptotic ``2 sum (-1)^(k-1) exp(-2 k^2 n D^2)``, clipped to [0, 1]."""
    x = 2.0 * n * D * D
    if x <= 0:
        return 1.0
    # the alternating series tends to 1 as x -> 0 but converges too slowly there
    if np.sqrt(x / 2.0) < 0.1:
        return 1.0
    total, k = 0.0, 1
    while True:
        term = np.exp(-x * k * k)
        total += term if k % 2 else -term
        if term < 1e-12:
            break
        k += 1
    return float(min(1.0, max(0.0, 2.0 * total)))


def ks_statistic(u) -> float:
    """One-sample KS distance between the empirical law of ``u`` and Uniform(0, 1)."""
    u = np.sort(np.asarray(u, dtype=np.float64))
    n = u.size
    if n == 0:
        raise DiagnosticError("empty sample")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))


def pit_ks(predictor, labeled_test: Sample):
    """``(D, p_value)`` for the PIT values against Uniform(0, 1)."""
    if labeled_test.n == 0 or labeled_test.response is None:
        raise DiagnosticError("PIT test needs a nonempty labeled test set")
    D = ks_statistic(pit_values(predictor, labeled_test))
    return D, kolmogorov_pvalue(D, labeled_test.n)


def hpd_region(d: DensityGrid, alpha: float):
    """Highest-density region of mass ``alpha`` as a list of ``(lo, hi)`` intervals.

    Grid cells (between adjacent knots) are taken in descending order of mean
    density, ties to lower ``z``, until their trapezoid mass reaches
    ``alpha``; the last cell is included only partially so the region's mass
    equals ``alpha``.  The partial piece sits on the side touching an already
    selected neighbor cell, else at the cell's left edge.
    """
    if d.batched:
        raise DiagnosticError("hpd_region takes a single density")
    if not 0 <= alpha <= 1:
        raise DiagnosticError("alpha must lie in [0, 1]")
    if alpha <= 0:
        return []
    g, v = d.grid, d.values
    h = np.diff(g)
    dens = (v[:-1] + v[1:]) / 2
    mass = dens * h
    order = np.lexsort((np.arange(mass.size), -dens))
    csum = np.cumsum(mass[order])
    k = int(np.searchsorted(csum, alpha - 1e-15, side="left"))
    k = min(k, mass.size - 1)
    full = order[:k]
    last = order[k]
    prev = csum[k - 1] if k else 0.0
    frac = 1.0 if mass[last] <= 0 else min(1.0, max(0.0, (alpha - prev) / mass[last]))
    selected = np.zeros(mass.size, dtype=bool)
    selected[full] = True
    lo_c, hi_c = g[last], g[last + 1]
    width = frac * (hi_c - lo_c)
    left_sel = last > 0 and selected[last - 1]
    right_sel = last + 1 < mass.size and selected[last + 1]
    if right_sel and not left_sel:
        piece = (hi_c - width, hi_c)
    else:
        piece = (lo_c, lo_c + width)

    spans = [(g[i], g[i + 1]) for i in np.flatnonzero(selected)]
    if width > 0:
        spans.append(piece)
    spans.sort()
    merged = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1] + 1e-15:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return [(float(a), float(b)) for a, b in merged]


def hpd_cell_count(d: DensityGrid, alpha: float) -> int:
    """Number of grid cells the HPD region touches."""
    g = d.grid
    n = 0
    for lo, hi in hpd_region(d, alpha):
        i0 = int(np.floor(lo * (g.size - 1) + 1e-9))
        i1 = int(np.ceil(hi * (g.size - 1) - 1e-9))
        n += max(i1 - i0, 0)
    return n


def region_mass(d: DensityGrid, intervals) -> float:
    """Integral of the grid density (linear between knots) over the intervals."""
    return float(sum(cdf(d, hi) - cdf(d, lo) for lo, hi in intervals)) if intervals else 0.0


def in_region(z: float, intervals) -> bool:
    return any(lo <= z <= hi for lo, hi in intervals)


def coverage_curve(predictor, labeled_test: Sample, alpha_grid=None, weights=None, self_normalize=True):
    """``[(alpha, alpha_hat, ci_low, ci_high)]`` for HPD regions of each level.

    The 95% interval is the normal approximation to a binomial proportion
    centered at the nominal ``alpha`` with the weights' effective sample size
    as the number of trials.
    """
    if alpha_grid is None:
        alpha_grid = np.linspace(0.1, 0.9, 9)
    if labeled_test.response is None:
        raise DiagnosticError("coverage needs responses")
    w = _weights(labeled_test, weights)
    n_eff = effective_sample_size(w)
    d = densities(predictor, labeled_test.covariates)
    z = labeled_test.response
    out = []
    for a in np.asarray(alpha_grid, dtype=np.float64):
        ind = np.array([in_region(z[i], hpd_region(d.row(i), a)) for i in range(labeled_test.n)], dtype=float)
        ahat = _weighted_rate(ind, w, self_normalize)
        half = Z95 * np.sqrt(a * (1 - a) / n_eff)
        out.append((float(a), float(ahat), float(max(0.0, a - half)), float(min(1.0, a + half))))
    return out


def mean_hpd_size(predictor, X, alpha: float) -> float:
    """Average total length of the ``alpha`` HPD regions over the rows of ``X``."""
    d = densities(predictor, X)
    sizes = [sum(hi - lo for lo, hi in hpd_region(d.row(i), alpha)) for i in range(len(d))]
    return float(np.mean(sizes))


@dataclass
class DiagnosticReport:
    qq: list
    coverage: list
    ks_statistic: float
    ks_pvalue: float
    hpd_regions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "qq": [list(p) for p in self.qq],
            "coverage": [list(p) for p in self.coverage],
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "hpd_regions": [[list(iv) for iv in r] for r in self.hpd_regions],
        }


def diagnose(predictor, labeled_test: Sample, c_grid=None, alpha_grid=None, hpd_alpha=0.95, weights=None,
             self_normalize=True) -> DiagnosticReport:
    qq = qq_curve(predictor, labeled_test, c_grid, weights, self_normalize)
    cov = coverage_curve(predictor, labeled_test, alpha_grid, weights, self_normalize)
    D, p = pit_ks(predictor, labeled_test)
    d = densities(predictor, labeled_test.covariates)
    regions = [hpd_region(d.row(i), hpd_alpha) for i in range(labeled_test.n)]
    return DiagnosticReport(qq, cov, D, p, regions)
