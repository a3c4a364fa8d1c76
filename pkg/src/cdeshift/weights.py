"""Nearest-neighbor importance weights ``beta(x) = f_U(x) / f_L(x)``.

For a query ``x`` let ``r`` be the distance to its ``M``-th nearest labeled
training point.  The estimate is ``(1/M) (n_L/n_U)`` times the number of
unlabeled training points within distance ``r`` (boundary included).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Sample
from .losses import best_by_loss


class WeightError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightModel:
    labeled_train: np.ndarray
    unlabeled_train: np.ndarray
    M: int
    covariate_subset: tuple[int, ...]
    loss_table: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self):
        L = np.ascontiguousarray(self.labeled_train, dtype=np.float64)
        U = np.ascontiguousarray(self.unlabeled_train, dtype=np.float64)
        if L.ndim != 2 or U.ndim != 2 or L.shape[1] != U.shape[1]:
            raise WeightError("labeled and unlabeled training matrices must share columns")
        if not self.covariate_subset or len(self.covariate_subset) != L.shape[1]:
            raise WeightError("covariate_subset must list one index per stored column")
        if not 1 <= self.M <= L.shape[0]:
            raise WeightError(f"M={self.M} outside [1, {L.shape[0]}]")
        if U.shape[0] == 0:
            raise WeightError("no unlabeled training rows")
        object.__setattr__(self, "labeled_train", L)
        object.__setattr__(self, "unlabeled_train", U)
        object.__setattr__(self, "covariate_subset", tuple(int(i) for i in self.covariate_subset))

    @property
    def n_L(self) -> int:
        return self.labeled_train.shape[0]

    @property
    def n_U(self) -> int:
        return self.unlabeled_train.shape[0]

    def _project(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] <= max(self.covariate_subset):
            raise WeightError(f"query has {X.shape[1]} columns; model uses indices {self.covariate_subset}")
        return X[:, list(self.covariate_subset)]

    def predict(self, X) -> np.ndarray:
        return predict_beta(self, X)


def _matrix(x) -> np.ndarray:
    if isinstance(x, Sample):
        return x.covariates
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def fit_weights(labeled_train, unlabeled_train, M: int, covariate_subset=None) -> WeightModel:
    XL, XU = _matrix(labeled_train), _matrix(unlabeled_train)
    if covariate_subset is None:
        covariate_subset = tuple(range(XL.shape[1]))
    cols = list(covariate_subset)
    return WeightModel(XL[:, cols], XU[:, cols], int(M), tuple(cols))


def predict_beta(model: WeightModel, X) -> np.ndarray:
    """Estimated weights at every row of ``X`` (full covariate matrix)."""
    Q = model._project(_matrix(X))
    _, r2 = _kernels.knn(model.labeled_train, Q, model.M)
    counts = _kernels.radius_count(model.unlabeled_train, Q, r2)
    return counts * (model.n_L / (model.M * model.n_U))


def beta_loss_from_values(beta_labeled, beta_unlabeled) -> float:
    bl = np.asarray(beta_labeled, dtype=np.float64)
    bu = np.asarray(beta_unlabeled, dtype=np.float64)
    if bl.size == 0 or bu.size == 0:
        raise WeightError("empty validation set")
    return float(np.mean(bl * bl) - 2.0 * np.mean(bu))


def beta_loss(model: WeightModel, labeled_val, unlabeled_val) -> float:
    """Validation estimate of the P_L-weighted squared error of the weights.

    Equals the squared error up to an additive constant independent of the
    estimator, so it can be negative; smaller is better.
    """
    XL, XU = _matrix(labeled_val), _matrix(unlabeled_val)
    if XL.shape[0] == 0 or XU.shape[0] == 0:
        raise WeightError("empty validation set")
    return beta_loss_from_values(predict_beta(model, XL), predict_beta(model, XU))


def _sorted_sqdist(train, Q, keep=None):
    d2 = _kernels.sqdist(Q, train)
    d2.sort(axis=1, kind="stable")
    return d2 if keep is None else d2[:, :keep]


def beta_profile(labeled_train, unlabeled_train, Q, M_values):
    """Weights at ``Q`` for several ``M`` at once, shape ``(len(M_values), len(Q))``.

    Shares one distance computation across the grid; agrees exactly with
    :func:`predict_beta` because both compare the same squared distances.
    """
    M_values = np.asarray(M_values, dtype=np.int64)
    nL, nU = labeled_train.shape[0], unlabeled_train.shape[0]
    dl = _sorted_sqdist(labeled_train, Q, keep=int(M_values.max()))
    du = _sorted_sqdist(unlabeled_train, Q)
    out = np.empty((M_values.size, Q.shape[0]))
    for a, M in enumerate(M_values):
        r2 = dl[:, M - 1]
        counts = np.array([np.searchsorted(du[i], r2[i], side="right") for i in range(Q.shape[0])])
        out[a] = counts * (nL / (M * nU))
    return out


def select_M(labeled_train, unlabeled_train, labeled_val, unlabeled_val, M_grid, covariate_subset=None) -> WeightModel:
    """Fit one model per ``M`` and keep the validation-loss minimizer.

    Ties go to the smaller ``M``.  The returned model's ``loss_table`` lists
    every ``(M, loss)`` pair in ascending ``M``.
    """
    XL, XU = _matrix(labeled_train), _matrix(unlabeled_train)
    VL, VU = _matrix(labeled_val), _matrix(unlabeled_val)
    if VL.shape[0] == 0 or VU.shape[0] == 0:
        raise WeightError("empty validation set")
    grid = sorted({int(m) for m in M_grid})
    if not grid:
        raise WeightError("empty M grid")
    if grid[0] < 1 or grid[-1] > XL.shape[0]:
        raise WeightError(f"M grid must lie in [1, {XL.shape[0]}]")
    if covariate_subset is None:
        covariate_subset = tuple(range(XL.shape[1]))
    cols = list(covariate_subset)
    L, U = XL[:, cols], XU[:, cols]
    bl = beta_profile(L, U, np.ascontiguousarray(VL[:, cols]), grid)
    bu = beta_profile(L, U, np.ascontiguousarray(VU[:, cols]), grid)
    table = [(M, beta_loss_from_values(bl[a], bu[a])) for a, M in enumerate(grid)]
    best_M, _ = best_by_loss(table, lambda t: t[1], lambda t: t[0])
    return WeightModel(L, U, best_M, tuple(cols), tuple(table))


def effective_sample_size(weights) -> float:
    """``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise WeightError("weights must be nonnegative")
    if not np.any(w > 0):
        raise WeightError("effective sample size needs at least one positive weight")
    return float(w.sum() ** 2 / np.sum(w * w))


@dataclass(frozen=True)
class CleanResult:
    sample: Sample
    zero_fraction: float
    n_nonzero: int
    prelim_M: int


def clean_zero_weights(
    labeled_pool: Sample,
    labeled_current: Sample,
    unlabeled: Sample,
    target_size: int,
    prelim_M_grid=(1, 2, 4, 8, 16, 32),
    seed: int = 0,
    validation_fraction: float = 0.3,
    covariate_subset=None,
) -> CleanResult:
    """Replace the labeled sample by pool rows whose preliminary weight is nonzero.

    A preliminary nearest-neighbor weight model is fit on ``labeled_current``
    versus ``unlabeled`` (``M`` chosen on a held-out fraction of each), then
    evaluated on the pool.  The first ``target_size`` nonzero-weight pool rows
    in a seeded shuffle are returned.
    """
    if labeled_pool.n <= labeled_current.n:
        raise WeightError("labeled pool must be strictly larger than the current labeled sample")
    rng = np.random.default_rng(int(seed))

    def holdout(n):
        perm = rng.permutation(n)
        k = max(1, int(round(validation_fraction * n)))
        if k >= n:
            raise WeightError("not enough rows for a preliminary validation split")
        return perm[k:], perm[:k]

    lt, lv = holdout(labeled_current.n)
    ut, uv = holdout(unlabeled.n)
    XL, XU = labeled_current.covariates, unlabeled.covariates
    grid = [m for m in prelim_M_grid if m <= lt.size]
    prelim = select_M(XL[lt], XU[ut], XL[lv], XU[uv], grid, covariate_subset)
    beta = predict_beta(prelim, labeled_pool.covariates)
    nonzero = beta > 0
    n_ok = int(nonzero.sum())
    if n_ok < target_size:
        raise WeightError(f"only {n_ok} pool rows have nonzero weight; cannot reach {target_size}")
    order = rng.permutation(labeled_pool.n)
    chosen = order[nonzero[order]][:target_size]
    return CleanResult(
        labeled_pool.take(np.sort(chosen)),
        float(1.0 - n_ok / labeled_pool.n),
        n_ok,
        prelim.M,
    )
