"""Biased-sample construction and synthetic datasets with known truth.

``rejection_sample`` thins a labeled pool with acceptance probability
proportional to a beta density of one designated covariate.  ``make_oracle``
draws labeled/unlabeled samples that share one conditional law ``f(z|x)``
(covariate shift only) and exposes that law and the importance weight
``f_U(x) / f_L(x)`` in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import DataError, Sample
from .grid import DensityGrid, trapezoid_weights, uniform_grid

SCHEME_PARAMS = {"scheme1": (1.0, 1.0), "scheme2": (13.0, 4.0), "scheme3": (18.0, 4.0)}


@dataclass(frozen=True)
class SelectionScheme:
    name: str = "scheme1"
    beta_params: tuple[float, float] | None = None
    bias_column: str | int = 0
    seed: int = 0

    def __post_init__(self):
        if self.name not in (*SCHEME_PARAMS, "custom"):
            raise ValueError(f"unknown selection scheme {self.name!r}")
        if self.name == "custom":
            if self.beta_params is None:
                raise ValueError("custom scheme needs beta_params")
        elif self.beta_params is None:
            object.__setattr__(self, "beta_params", SCHEME_PARAMS[self.name])
        elif tuple(map(float, self.beta_params)) != SCHEME_PARAMS[self.name]:
            raise ValueError(f"{self.name} requires beta_params {SCHEME_PARAMS[self.name]}")
        a, b = self.beta_params
        if not (a > 0 and b > 0):
            raise ValueError("beta parameters must be positive")
        object.__setattr__(self, "beta_params", (float(a), float(b)))


def beta_density_max(a: float, b: float) -> float:
    """Maximum of the Beta(a, b) density on [0, 1]."""
    if a > 1 and b > 1:
        return float(stats.beta.pdf((a - 1) / (a + b - 2), a, b))
    if a == 1 and b == 1:
        return 1.0
    if a == 1 and b > 1:
        return float(b)
    if b == 1 and a > 1:
        return float(a)
    raise ValueError(f"Beta({a}, {b}) density is unbounded; acceptance cannot be normalized")


def acceptance_probability(r, a: float, b: float) -> np.ndarray:
    """Beta density at ``r`` divided by its maximum, so values lie in [0, 1]."""
    r = np.asarray(r, dtype=np.float64)
    if a == 1 and b == 1:
        return np.ones_like(r)
    return np.clip(stats.beta.pdf(r, a, b) / beta_density_max(a, b), 0.0, 1.0)


def _column_index(sample: Sample, col) -> int:
    if isinstance(col, (int, np.integer)):
        if not 0 <= col < sample.d:
            raise DataError(f"bias column index {col} out of range")
        return int(col)
    if col not in sample.covariate_names:
        raise DataError(f"bias column {col!r} not in sample")
    return sample.covariate_names.index(col)


def rejection_sample(pool: Sample, scheme: SelectionScheme, photometric: bool = False) -> Sample:
    """Keep each pool row independently with the scheme's acceptance probability.

    Row order is preserved.  With ``photometric=True`` the responses are
    dropped from the output.
    """
    j = _column_index(pool, scheme.bias_column)
    r = pool.covariates[:, j]
    if np.any((r < 0) | (r > 1)):
        raise DataError("bias column must be scaled to [0, 1] before selection")
    p = acceptance_probability(r, *scheme.beta_params)
    u = np.random.default_rng(int(scheme.seed)).random(pool.n)
    keep = np.flatnonzero(u < p)
    if keep.size == 0:
        raise DataError("no rows accepted; use a larger pool")
    out = pool.take(keep)
    return out.unlabeled() if photometric else out


# -- synthetic oracle --------------------------------------------------------


@dataclass(frozen=True)
class OracleSpec:
    """Generator settings for a synthetic covariate-shift dataset.

    ``shift_kind`` selects how the unlabeled covariate law differs:

    * ``"location"``: unlabeled ``x ~ N(shift * e1, I)`` versus labeled ``N(0, I)``.
    * ``"beta"``: unlabeled rows are labeled-law draws accepted with
      probability proportional to ``Beta(a, b)`` density of ``Phi(x1)``;
      ``shift`` is ignored and ``beta_params`` sets the strength.
    * ``"support"``: labeled law is an equal mixture of ``N(0, I)`` and a
      far cluster ``N(shift * e_d, I)``; unlabeled is ``N(0, I)``.
    """

    d: int = 1
    n_labeled: int = 1000
    n_unlabeled: int = 1000
    shift: float = 0.0
    noise: float = 0.05
    seed: int = 0
    shift_kind: str = "location"
    beta_params: tuple[float, float] = (18.0, 4.0)
    mean: str = "logistic"
    coef: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.noise > 0:
            raise ValueError("noise scale must be positive")
        if self.n_labeled < 50 or self.n_unlabeled < 50:
            raise ValueError("oracle samples need at least 50 rows each")
        if self.shift_kind not in ("location", "beta", "support"):
            raise ValueError(f"unknown shift_kind {self.shift_kind!r}")
        if self.mean not in ("logistic", "identity"):
            raise ValueError(f"unknown mean function {self.mean!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.shift_kind == "support" and self.d < 2:
            raise ValueError("support shift needs d >= 2 (the far cluster sits on the last axis)")


@dataclass(frozen=True)
class Oracle:
    spec: OracleSpec
    labeled: Sample
    unlabeled: Sample
    labeled_far: np.ndarray = field(default=None)

    def conditional_mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.spec.mean == "identity":
            return X[:, 0].copy()
        coef = np.zeros(self.spec.d)
        if self.spec.coef is None:
            coef[0] = 1.5
        else:
            coef[:] = self.spec.coef
        return 0.15 + 0.7 / (1.0 + np.exp(-(X @ coef)))

    def true_density(self, X, grid=None) -> DensityGrid:
        """Truncated-normal ``f(z|x)`` on the grid, renormalized by trapezoid."""
        grid = uniform_grid() if grid is None else np.asarray(grid, dtype=np.float64)
        m = self.conditional_mean(X)
        s = self.spec.noise
        vals = stats.norm.pdf((grid[None, :] - m[:, None]) / s) / s
        vals /= (vals @ trapezoid_weights(grid))[:, None]
        return DensityGrid(grid, vals, normalized=True)

    def beta(self, X) -> np.ndarray:
        """Closed-form importance weight ``f_U(x) / f_L(x)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        spec = self.spec
        if spec.shift_kind == "location":
            return np.exp(spec.shift * X[:, 0] - spec.shift**2 / 2)
        if spec.shift_kind == "beta":
            a, b = spec.beta_params
            # Phi(x1) is uniform under f_L, so the accepted law has ratio pdf_B(Phi(x1))
            return stats.beta.pdf(stats.norm.cdf(X[:, 0]), a, b)
        mu = spec.shift
        return 2.0 / (1.0 + np.exp(mu * X[:, -1] - mu**2 / 2))

    def draw_response(self, X, rng) -> np.ndarray:
        m = self.conditional_mean(X)
        s = self.spec.noise
        return stats.truncnorm.rvs((0 - m) / s, (1 - m) / s, loc=m, scale=s, random_state=rng)


def _names(d):
    return tuple(f"x{i}" for i in range(d))


def make_oracle(spec: OracleSpec) -> Oracle:
    """Draw labeled and unlabeled samples (both with responses) from ``spec``.

    The unlabeled sample keeps its responses so oracle losses can be computed;
    call ``.unlabeled()`` on it to hide them.
    """
    rng = np.random.default_rng(int(spec.seed))
    d = spec.d
    far = None
    if spec.shift_kind == "support":
        far = rng.random(spec.n_labeled) < 0.5
        XL = rng.standard_normal((spec.n_labeled, d))
        XL[far, -1] += spec.shift
    else:
        XL = rng.standard_normal((spec.n_labeled, d))

    if spec.shift_kind == "location":
        XU = rng.standard_normal((spec.n_unlabeled, d))
        XU[:, 0] += spec.shift
    elif spec.shift_kind == "support":
        XU = rng.standard_normal((spec.n_unlabeled, d))
    else:
        a, b = spec.beta_params
        chunks, have = [], 0
        while have < spec.n_unlabeled:
            cand = rng.standard_normal((4 * spec.n_unlabeled, d))
            p = acceptance_probability(stats.norm.cdf(cand[:, 0]), a, b)
            acc = cand[rng.random(cand.shape[0]) < p]
            chunks.append(acc)
            have += acc.shape[0]
        XU = np.vstack(chunks)[: spec.n_unlabeled]

    shell = Oracle(spec, Sample(XL[:1]), Sample(XU[:1]))
    zL = shell.draw_response(XL, rng)
    zU = shell.draw_response(XU, rng)
    return Oracle(
        spec,
        Sample(XL, zL, _names(d)),
        Sample(XU, zU, _names(d)),
        far,
    )
