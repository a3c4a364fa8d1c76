"""Spectral series conditional density estimator.

The covariate basis is the leading eigenvectors of the Gaussian Gram matrix
``exp(-|x_i - x_j|^2 / (4 eps))`` on the labeled training rows, extended to
new points with the Nystrom formula.  The response basis is a cosine basis on
[0, 1].  Coefficients are labeled-sample averages of the tensor basis, so the
estimator itself is always fit under P_L; only hyperparameter selection
sees the unlabeled data (through the shift-corrected loss).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _kernels
from .data import Sample
from .grid import DensityGrid, normalize, squared_integral, uniform_grid, value_at
from .losses import best_by_loss, combine

EIGEN_FLOOR = 1e-10

# number of Gram eigendecompositions performed; tuning tests inspect it
decomposition_count = 0


class SeriesError(ValueError):
    pass


def cosine_basis(z, I: int) -> np.ndarray:
    """Orthonormal cosine basis on [0, 1]: ``1, sqrt(2) cos(pi k z)``; shape ``(I, len(z))``."""
    z = np.asarray(z, dtype=np.float64)
    k = np.arange(I)[:, None]
    out = np.sqrt(2.0) * np.cos(np.pi * k * z[None, :])
    out[0] = 1.0
    return out


BASES = {"cosine": cosine_basis}


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Top eigenpairs of the Gram matrix (descending eigenvalues, unit-norm vectors)."""

    covariates: np.ndarray
    epsilon: float
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def rank(self) -> int:
        return self.eigvals.size

    def extend(self, X, J=None) -> np.ndarray:
        """Nystrom extension ``sqrt(n)/l_j * sum_k v_j(x_k) K(x, x_k)``, shape ``(m, J)``."""
        J = self.rank if J is None else J
        K = _kernels.gaussian_gram(np.atleast_2d(X), self.covariates, self.epsilon)
        n = self.covariates.shape[0]
        return (K @ self.eigvecs[:, :J]) * (np.sqrt(n) / self.eigvals[:J])

    def at_training(self, J=None) -> np.ndarray:
        J = self.rank if J is None else J
        return np.sqrt(self.covariates.shape[0]) * self.eigvecs[:, :J]


def spectral_basis(X, epsilon: float, J: int) -> SpectralBasis:
    """Decompose the Gram matrix, keeping at most ``J`` components above the floor."""
    global decomposition_count
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if not epsilon > 0:
        raise SeriesError("epsilon must be positive")
    if not 1 <= J <= n:
        raise SeriesError(f"J={J} outside [1, {n}]")
    G = _kernels.gaussian_gram(X, X, epsilon)
    vals, vecs = linalg.eigh(G, subset_by_index=[n - J, n - 1])
    decomposition_count += 1
    vals, vecs = vals[::-1], vecs[:, ::-1]
    keep = vals > EIGEN_FLOOR * vals[0]
    # eigh returns ascending values, so the kept ones form a prefix after reversal
    r = int(np.argmin(keep)) if not keep.all() else J
    return SpectralBasis(X, float(epsilon), vals[:r].copy(), fix_signs(vecs[:, :r]))


@dataclass(frozen=True, eq=False)
class SeriesModel:
    basis: SpectralBasis
    response: np.ndarray
    I: int
    J: int
    coeffs: np.ndarray
    covariate_subset: tuple[int, ...]
    grid: np.ndarray = field(default_factory=uniform_grid)
    basis_name: str = "cosine"
    corrected: bool = True
    loss_table: tuple = ()

    @property
    def epsilon(self) -> float:
        return self.basis.epsilon

    @property
    def eigvals(self) -> np.ndarray:
        return self.basis.eigvals[: self.J]

    @property
    def eigvecs(self) -> np.ndarray:
        return self.basis.eigvecs[:, : self.J]

    @property
    def method(self) -> str:
        return "series"

    def hyperparameters(self) -> dict:
        return {"I": self.I, "J": self.J, "epsilon": self.epsilon}

    def _project(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] <= max(self.covariate_subset):
            raise SeriesError(f"query has {X.shape[1]} columns; model uses indices {self.covariate_subset}")
        return X[:, list(self.covariate_subset)]

    def nystrom(self, X) -> np.ndarray:
        return self.basis.extend(self._project(X), self.J)

    def predict(self, X) -> DensityGrid:
        return _density(self.nystrom(X), self.coeffs, BASES[self.basis_name](self.grid, self.I), self.grid)


def _density(psi, coeffs, phi_grid, grid) -> DensityGrid:
    raw = psi @ coeffs.T @ phi_grid
    return normalize(DensityGrid(grid, raw))


def _coefficients(basis: SpectralBasis, z, I, J, basis_name="cosine") -> np.ndarray:
    n = z.size
    return BASES[basis_name](z, I) @ basis.at_training(J) / n


def fit_series(labeled_train: Sample, epsilon: float, I: int, J: int, covariate_subset=None, grid=None,
               basis_name: str = "cosine") -> SeriesModel:
    """Fit the series estimator with fixed ``(I, J, epsilon)``."""
    if I < 1:
        raise SeriesError("I must be at least 1")
    subset = tuple(range(labeled_train.d)) if covariate_subset is None else tuple(covariate_subset)
    basis = spectral_basis(labeled_train.columns(subset), epsilon, J)
    if basis.rank < J:
        raise SeriesError(f"Gram matrix has usable rank {basis.rank} < J={J}")
    return _model(basis, labeled_train.response, I, J, subset, grid, basis_name)


def _model(basis, z, I, J, subset, grid, basis_name, corrected=True, table=()):
    grid = uniform_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    return SeriesModel(basis, np.asarray(z, dtype=np.float64), int(I), int(J),
                       _coefficients(basis, z, I, J, basis_name), subset, grid, basis_name, corrected, table)


def nystrom_eval(model: SeriesModel, X) -> np.ndarray:
    return model.nystrom(X)


def predict_series(model: SeriesModel, X) -> DensityGrid:
    return model.predict(X)


def extrapolation_fraction(model: SeriesModel, X, threshold: float = 1e-3) -> float:
    """Fraction of query rows whose extended basis vector has norm below ``threshold``."""
    psi = model.nystrom(X)
    return float(np.mean(np.linalg.norm(psi, axis=1) < threshold)) if psi.shape[0] else 0.0


def tune_series(
    labeled_train: Sample,
    I_grid,
    J_grid,
    eps_grid,
    labeled_val: Sample,
    unlabeled_val: Sample | None = None,
    corrected: bool = True,
    covariate_subset=None,
    grid=None,
    basis_name: str = "cosine",
) -> SeriesModel:
    """Select ``(I, J, epsilon)`` by validation loss.

    One Gram decomposition per ``epsilon`` serves every ``(I, J)``.  ``J``
    values above the usable rank for a given ``epsilon`` are skipped.  Ties go
    to smaller ``(I, J)``, then larger ``epsilon``.
    """
    grid = uniform_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    subset = tuple(range(labeled_train.d)) if covariate_subset is None else tuple(covariate_subset)
    Is = sorted({int(i) for i in I_grid})
    Js = sorted({int(j) for j in J_grid})
    epss = sorted({float(e) for e in eps_grid}, reverse=True)
    if not Is or not Js or not epss:
        raise SeriesError("empty hyperparameter grid")
    if labeled_val.n == 0 or labeled_val.response is None:
        raise SeriesError("labeled validation set must be nonempty and labeled")
    if corrected and (unlabeled_val is None or unlabeled_val.n == 0 or labeled_val.weights is None):
        raise SeriesError("corrected tuning needs unlabeled validation rows and labeled validation weights")

    Xtr = labeled_train.columns(subset)
    z = labeled_train.response
    Jmax = min(Js[-1], Xtr.shape[0])
    phi = BASES[basis_name](grid, Is[-1])
    table, bases = [], {}
    for eps in epss:
        basis = spectral_basis(Xtr, eps, Jmax)
        bases[eps] = basis
        psiL = basis.extend(labeled_val.columns(subset))
        psiU = basis.extend(unlabeled_val.columns(subset)) if corrected else None
        alpha = _coefficients(basis, z, Is[-1], basis.rank, basis_name)
        for J in Js:
            if J > basis.rank:
                continue
            for I in Is:
                a = alpha[:I, :J]
                dL = _density(psiL[:, :J], a, phi[:I], grid)
                pv = value_at(dL, labeled_val.response)
                if corrected:
                    sq = squared_integral(_density(psiU[:, :J], a, phi[:I], grid))
                    loss = combine(sq, pv, labeled_val.weights)
                else:
                    loss = combine(squared_integral(dL), pv)
                table.append((I, J, eps, loss))
    if not table:
        raise SeriesError("no (I, J, epsilon) combination fits within the Gram rank")
    I, J, eps, _ = best_by_loss(table, lambda t: t[3], lambda t: (t[0], t[1], -t[2]))
    return _model(bases[eps], z, I, J, subset, grid, basis_name, corrected, tuple(table))
