"""Weighted nearest-neighbor conditional density estimators.

Both estimators look up the ``N`` nearest labeled training rows of a query
and combine their responses, each weighted by its importance weight:

* ``histogram``: weighted counts in ``B`` equal bins of [0, 1]
  (half-open bins, the last one closed);
* ``kernel``: weighted sum of ``exp(-(z - z_k)^2 / (4 eps))``.

The result is sampled on the shared grid and renormalized there.  With all
weights equal to one these are the uncorrected estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Sample
from .grid import DensityGrid, normalize, squared_integral, uniform_grid, value_at
from .losses import best_by_loss, combine

VARIANTS = ("histogram", "kernel")


class CdeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NnCdeModel:
    covariates: np.ndarray
    response: np.ndarray
    weights: np.ndarray
    variant: str
    N: int
    B: int | None = None
    epsilon: float | None = None
    covariate_subset: tuple[int, ...] = ()
    grid: np.ndarray = field(default_factory=uniform_grid)
    corrected: bool = True
    loss_table: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.covariates, dtype=np.float64)
        z = np.ascontiguousarray(self.response, dtype=np.float64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if X.ndim != 2 or z.shape != (X.shape[0],) or w.shape != (X.shape[0],):
            raise CdeError("training covariates, responses and weights disagree in length")
        if np.any(w < 0):
            raise CdeError("weights must be nonnegative")
        if self.variant not in VARIANTS:
            raise CdeError(f"unknown variant {self.variant!r}")
        if not 1 <= self.N <= X.shape[0]:
            raise CdeError(f"N={self.N} outside [1, {X.shape[0]}]")
        if self.variant == "histogram" and (self.B is None or self.B < 2):
            raise CdeError("histogram needs B >= 2")
        if self.variant == "kernel" and not (self.epsilon is not None and self.epsilon > 0):
            raise CdeError("kernel needs epsilon > 0")
        subset = tuple(int(i) for i in self.covariate_subset) or tuple(range(X.shape[1]))
        if len(subset) != X.shape[1]:
            raise CdeError("covariate_subset must list one index per stored column")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "response", z)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariate_subset", subset)

    @property
    def method(self) -> str:
        return "nn" if self.variant == "histogram" else "ker-nn"

    def hyperparameters(self) -> dict:
        if self.variant == "histogram":
            return {"N": self.N, "B": self.B}
        return {"N": self.N, "epsilon": self.epsilon}

    def neighbors(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] <= max(self.covariate_subset):
            raise CdeError(f"query has {X.shape[1]} columns; model uses indices {self.covariate_subset}")
        return _kernels.knn(self.covariates, X[:, list(self.covariate_subset)], self.N)[0]

    def predict(self, X) -> DensityGrid:
        return _from_neighbors(self, self.neighbors(X))


def _raw_grid(variant, zn, wn, grid, B, eps):
    if variant == "histogram":
        return _kernels.hist_grid(zn, wn, grid, B)
    return _kernels.kernel_grid(zn, wn, grid, eps)


def _from_neighbors(model: NnCdeModel, idx, B=None, eps=None) -> DensityGrid:
    B = model.B if B is None else B
    eps = model.epsilon if eps is None else eps
    zn, wn = model.response[idx], model.weights[idx]
    raw = _raw_grid(model.variant, zn, wn, model.grid, B, eps)
    return normalize(DensityGrid(model.grid, raw))


def predict_hist_nn(model: NnCdeModel, X) -> DensityGrid:
    if model.variant != "histogram":
        raise CdeError("model is not a histogram estimator")
    return model.predict(X)


def predict_ker_nn(model: NnCdeModel, X) -> DensityGrid:
    if model.variant != "kernel":
        raise CdeError("model is not a kernel estimator")
    return model.predict(X)


def _training_weights(labeled_train: Sample, weights, corrected):
    if not corrected:
        return np.ones(labeled_train.n)
    w = labeled_train.weights if weights is None else np.asarray(weights, dtype=np.float64)
    if w is None:
        raise CdeError("corrected fit needs importance weights on the training rows")
    return w


def fit_nn_cde(
    labeled_train: Sample,
    variant: str,
    N_grid,
    labeled_val: Sample,
    unlabeled_val: Sample | None = None,
    B_grid=(10,),
    eps_grid=(0.01,),
    weights=None,
    corrected: bool = True,
    covariate_subset=None,
    grid=None,
) -> NnCdeModel:
    """Tune ``(N, B)`` or ``(N, eps)`` on validation data.

    The corrected estimator uses training weights (``weights`` or
    ``labeled_train.weights``) and selects by the shift-corrected loss with
    ``labeled_val.weights``; the uncorrected one uses unit weights and the
    labeled-only loss.  Ties go to smaller ``N``, then smaller ``B`` or larger
    ``eps``.
    """
    if variant not in VARIANTS:
        raise CdeError(f"unknown variant {variant!r}")
    grid = uniform_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    subset = tuple(range(labeled_train.d)) if covariate_subset is None else tuple(covariate_subset)
    w_train = _training_weights(labeled_train, weights, corrected)
    Ns = sorted({int(n) for n in N_grid})
    second = sorted({int(b) for b in B_grid}) if variant == "histogram" else sorted({float(e) for e in eps_grid}, reverse=True)
    if not Ns or not second:
        raise CdeError("empty hyperparameter grid")
    if labeled_val.n == 0 or labeled_val.response is None:
        raise CdeError("labeled validation set must be nonempty and labeled")
    if corrected:
        if unlabeled_val is None or unlabeled_val.n == 0:
            raise CdeError("corrected fit needs a nonempty unlabeled validation set")
        if labeled_val.weights is None:
            raise CdeError("corrected fit needs weights on the labeled validation rows")

    Xtr = labeled_train.columns(subset)
    Nmax = min(Ns[-1], labeled_train.n)
    if Ns[0] < 1 or Ns[-1] > labeled_train.n:
        raise CdeError(f"N grid must lie in [1, {labeled_train.n}]")
    proto = NnCdeModel(
        Xtr, labeled_train.response, w_train, variant, Ns[0],
        B=second[0] if variant == "histogram" else None,
        epsilon=second[0] if variant == "kernel" else None,
        covariate_subset=subset, grid=grid, corrected=corrected,
    )
    idx_L = _kernels.knn(Xtr, labeled_val.columns(subset), Nmax)[0]
    idx_U = _kernels.knn(Xtr, unlabeled_val.columns(subset), Nmax)[0] if corrected else None

    table = []
    for N in Ns:
        for s in second:
            B, eps = (s, None) if variant == "histogram" else (None, s)
            dL = _from_neighbors(proto, idx_L[:, :N], B, eps)
            pv = value_at(dL, labeled_val.response)
            if corrected:
                sq = squared_integral(_from_neighbors(proto, idx_U[:, :N], B, eps))
                loss = combine(sq, pv, labeled_val.weights)
            else:
                loss = combine(squared_integral(dL), pv)
            table.append((N, s, loss))
    # second-axis values are pre-sorted in preference order
    order = {v: i for i, v in enumerate(second)}
    N, s, _ = best_by_loss(table, lambda t: t[2], lambda t: (t[0], order[t[1]]))
    return NnCdeModel(
        Xtr, labeled_train.response, w_train, variant, N,
        B=s if variant == "histogram" else None,
        epsilon=s if variant == "kernel" else None,
        covariate_subset=subset, grid=grid, corrected=corrected, loss_table=tuple(table),
    )


def marginal_model(labeled_train: Sample, epsilon: float, weights=None, corrected=True, grid=None) -> NnCdeModel:
    """Weighted kernel estimate of the marginal ``f(z)``: every training row is a neighbor."""
    grid = uniform_grid() if grid is None else grid
    w = _training_weights(labeled_train, weights, corrected)
    # one constant covariate makes every row equidistant from any query
    X = np.zeros((labeled_train.n, 1))
    return _MarginalModel(X, labeled_train.response, w, "kernel", labeled_train.n, epsilon=epsilon,
                          covariate_subset=(0,), grid=grid, corrected=corrected)


class _MarginalModel(NnCdeModel):
    def neighbors(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.broadcast_to(np.arange(self.N), (X.shape[0], self.N))

    def predict(self, X) -> DensityGrid:
        n = np.atleast_2d(np.asarray(X, dtype=np.float64)).shape[0]
        one = _from_neighbors(self, np.arange(self.N)[None, :])
        return DensityGrid(self.grid, np.repeat(one.values, n, axis=0), True, np.repeat(one.fallback, n))

    @property
    def method(self) -> str:
        return "marginal"
