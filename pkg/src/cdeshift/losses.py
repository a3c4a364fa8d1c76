"""Empirical L2 losses for conditional density estimates, with bootstrap SEs.

All three variants drop the same estimator-independent constant, so values
are only comparable within one variant and one pair of evaluation sets.

``predictor`` arguments are anything with ``predict(X) -> DensityGrid``
(a normalized batch) or a plain callable with that signature.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Sample
from .grid import DensityGrid, GridError, squared_integral, value_at

VARIANTS = ("labeled_only", "shift_corrected", "oracle")
DEFAULT_B_BOOT = 500


class LossError(ValueError):
    pass


@dataclass
class LossReport:
    value: float
    variant: str
    se: float | None = None
    n_L_eval: int = 0
    n_U_eval: int = 0
    B_boot: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise LossError(f"unknown loss variant {self.variant!r}")
        if self.se is not None and (self.se < 0 or self.B_boot is None or self.B_boot < 2):
            raise LossError("a standard error needs B_boot >= 2 and must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


TIE_RTOL = 1e-12


def best_by_loss(rows, loss, tiekey):
    """Row with the smallest ``loss(row)``; rows within ``TIE_RTOL`` of it tie.

    Ties resolve to the smallest ``tiekey(row)``.  The tolerance absorbs
    rounding noise between candidates that are equal in exact arithmetic.
    """
    rows = list(rows)
    lo = min(loss(r) for r in rows)
    cut = lo + TIE_RTOL * max(1.0, abs(lo))
    return min((r for r in rows if loss(r) <= cut), key=tiekey)


def densities(predictor, X) -> DensityGrid:
    fn = predictor.predict if hasattr(predictor, "predict") else predictor
    d = fn(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if not isinstance(d, DensityGrid):
        raise LossError("predictor must return a DensityGrid")
    if not d.normalized:
        raise GridError("predictor emitted an unnormalized density")
    return d


def _labeled(sample: Sample, what: str) -> Sample:
    if sample.n == 0:
        raise LossError(f"empty {what} evaluation set")
    if sample.response is None:
        raise LossError(f"{what} evaluation set has no responses")
    return sample


def point_terms(predictor, sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``(int f^2 dz, f(z_k | x_k))`` for a labeled sample."""
    d = densities(predictor, sample.covariates)
    return squared_integral(d), value_at(d, sample.response)


def combine(sq_terms, point_values, weights=None) -> float:
    """``mean(sq_terms) - 2 * mean(point_values * weights)``."""
    pv = point_values if weights is None else point_values * weights
    return float(np.mean(sq_terms) - 2.0 * np.mean(pv))


def bootstrap_se(loss_fn, n_labeled: int, n_unlabeled: int = 0, B_boot: int = DEFAULT_B_BOOT, seed: int = 0) -> float:
    """Bootstrap standard error of a loss.

    ``loss_fn(idx_L, idx_U)`` recomputes the loss on resampled row indices.
    Labeled and unlabeled sets are resampled independently, with replicate
    ``b`` seeded by ``(seed, b)``.  Returns the population standard deviation
    of the replicate losses.
    """
    if B_boot < 2:
        raise LossError("B_boot must be at least 2")
    reps = np.empty(B_boot)
    empty = np.empty(0, dtype=np.int64)
    for b in range(B_boot):
        rng = np.random.default_rng([int(seed), b])
        iL = rng.integers(0, n_labeled, n_labeled) if n_labeled else empty
        iU = rng.integers(0, n_unlabeled, n_unlabeled) if n_unlabeled else empty
        reps[b] = loss_fn(iL, iU)
    return float(np.std(reps))


def _unweighted_report(sq, pv, variant, B_boot, seed, meta, n_L, n_U):
    value = combine(sq, pv)
    se = None
    if B_boot:
        se = bootstrap_se(lambda iL, iU: combine(sq[iL], pv[iL]), sq.size, 0, B_boot, seed)
    return LossReport(value, variant, se, n_L, n_U, B_boot or None, dict(meta or {}))


def loss_labeled(predictor, labeled_eval: Sample, B_boot: int = 0, seed: int = 0, metadata=None) -> LossReport:
    """Labeled-only empirical loss (appropriate when P_L equals P_U)."""
    sq, pv = point_terms(predictor, _labeled(labeled_eval, "labeled"))
    return _unweighted_report(sq, pv, "labeled_only", B_boot, seed, metadata, labeled_eval.n, 0)


def loss_oracle(predictor, unlabeled_eval: Sample, B_boot: int = 0, seed: int = 0, metadata=None) -> LossReport:
    """Loss on target-distribution rows whose responses are known (simulation only)."""
    if unlabeled_eval.response is None:
        raise LossError("oracle loss needs responses on the unlabeled evaluation set")
    sq, pv = point_terms(predictor, _labeled(unlabeled_eval, "unlabeled"))
    return _unweighted_report(sq, pv, "oracle", B_boot, seed, metadata, 0, unlabeled_eval.n)


def shifted_terms(predictor, labeled_eval: Sample, unlabeled_eval: Sample, weights=None):
    """``(sq_U, point_L, w_L)`` used by the covariate-shift loss."""
    labeled_eval = _labeled(labeled_eval, "labeled")
    if unlabeled_eval.n == 0:
        raise LossError("empty unlabeled evaluation set")
    w = labeled_eval.weights if weights is None else np.asarray(weights, dtype=np.float64)
    if w is None:
        raise LossError("shift-corrected loss needs weights on the labeled evaluation rows")
    if w.shape != (labeled_eval.n,) or np.any(w < 0):
        raise LossError("weights must be one nonnegative value per labeled row")
    sqU = squared_integral(densities(predictor, unlabeled_eval.covariates))
    _, pvL = point_terms(predictor, labeled_eval)
    return sqU, pvL, w


def loss_shifted(
    predictor, labeled_eval: Sample, unlabeled_eval: Sample, weights=None, B_boot: int = 0, seed: int = 0, metadata=None
) -> LossReport:
    """Importance-weighted estimate of the loss under the unlabeled covariate law.

    ``weights`` default to ``labeled_eval.weights``.
    """
    sqU, pvL, w = shifted_terms(predictor, labeled_eval, unlabeled_eval, weights)
    value = combine(sqU, pvL, w)
    se = None
    if B_boot:
        se = bootstrap_se(lambda iL, iU: combine(sqU[iU], pvL[iL], w[iL]), pvL.size, sqU.size, B_boot, seed)
    return LossReport(value, "shift_corrected", se, labeled_eval.n, unlabeled_eval.n, B_boot or None, dict(metadata or {}))


def evaluate(predictor, variant: str, labeled_eval=None, unlabeled_eval=None, weights=None, B_boot=0, seed=0, metadata=None):
    """Dispatch on ``variant`` (one of ``VARIANTS``)."""
    if variant == "labeled_only":
        return loss_labeled(predictor, labeled_eval, B_boot, seed, metadata)
    if variant == "shift_corrected":
        return loss_shifted(predictor, labeled_eval, unlabeled_eval, weights, B_boot, seed, metadata)
    if variant == "oracle":
        return loss_oracle(predictor, unlabeled_eval, B_boot, seed, metadata)
    raise LossError(f"unknown loss variant {variant!r}")
