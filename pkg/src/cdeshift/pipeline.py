"""End-to-end fit: weights with covariate selection, tuned series and kernel
nearest-neighbor estimators, stacking, and an outer covariate search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cde_nn import fit_nn_cde, marginal_model
from .cde_series import SeriesError, tune_series
from .data import Sample
from .losses import loss_labeled, loss_oracle, loss_shifted
from .stacking import StackedModel, exhaustive_select, forward_select, stack
from .weights import effective_sample_size, predict_beta, select_M


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@dataclass
class Grids:
    M: tuple = (1, 2, 4, 8, 16, 32)
    N: tuple = (5, 10, 20, 40)
    B: tuple = (5, 10, 20)
    eps_ker: tuple = (0.0005, 0.002, 0.008)
    I: tuple = (5, 10, 20)
    J: tuple = (5, 10, 20)
    eps_series: tuple = (0.25, 1.0, 4.0)


@dataclass
class PipelineResult:
    model: StackedModel
    weight_model: object
    subset: tuple
    beta_trace: object
    cde_trace: object
    validation_loss: float
    components: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    candidate_losses: dict = field(default_factory=dict)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except PipelineError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineError(name, str(exc)) from exc


def _select(score, candidates, baseline, mode):
    if mode == "forward":
        return forward_select(score, candidates, baseline)
    if mode == "exhaustive":
        return exhaustive_select(score, candidates, baseline)
    if mode == "none":
        from .stacking import SelectionTrace

        tr = SelectionTrace(baseline=baseline, mode="none")
        tr.subset = tuple(candidates)
        tr.steps = [(c, score(tuple(candidates))) for c in candidates[-1:]]
        return tr
    raise PipelineError("config", f"unknown selection mode {mode!r}")


def fit_weights_stage(labeled_train, unlabeled_train, labeled_val, unlabeled_val, M_grid, mode="forward"):
    """Covariate search for the weight model; each subset gets its own best ``M``."""
    nL = labeled_train.n
    grid = [m for m in M_grid if m <= nL]
    cache = {}

    def score(subset):
        key = tuple(sorted(subset))
        if key not in cache:
            cache[key] = select_M(labeled_train, unlabeled_train, labeled_val, unlabeled_val, grid, key)
        return min(l for _, l in cache[key].loss_table)

    candidates = list(range(labeled_train.d))
    trace = _select(score, candidates, float("inf"), mode)
    trace.note = "beta search starts from the best single covariate"
    return cache[tuple(sorted(trace.subset))], trace


def fit_combined(
    labeled_train: Sample,
    labeled_val: Sample,
    unlabeled_train: Sample,
    unlabeled_val: Sample,
    grids: Grids | None = None,
    corrected: bool = True,
    beta_selection: str = "forward",
    cde_selection: str = "forward",
    grid=None,
    labeled_test: Sample | None = None,
    unlabeled_test: Sample | None = None,
    B_boot: int = 0,
    seed: int = 0,
) -> PipelineResult:
    """Run the whole procedure on standardized in-memory samples.

    With ``corrected=False`` every importance weight is one and selection uses
    the labeled-only loss (the stacked objective then uses labeled
    validation rows for both terms).
    """
    grids = grids or Grids()
    if corrected:
        wmodel, btrace = _stage("weights", fit_weights_stage, labeled_train, unlabeled_train, labeled_val,
                                unlabeled_val, grids.M, beta_selection)
        w_tr = _stage("weights", predict_beta, wmodel, labeled_train.covariates)
        w_val = _stage("weights", predict_beta, wmodel, labeled_val.covariates)
        if not np.any(w_tr > 0):
            raise PipelineError("weights", "every labeled training weight is zero")
        if not np.any(w_val > 0):
            raise PipelineError("weights", "every labeled validation weight is zero")
    else:
        wmodel, btrace = None, None
        w_tr, w_val = np.ones(labeled_train.n), np.ones(labeled_val.n)
    LT = labeled_train.with_weights(w_tr)
    LV = labeled_val.with_weights(w_val)
    UV = unlabeled_val if corrected else labeled_val.unlabeled()

    def val_loss(model):
        if corrected:
            return loss_shifted(model, LV, UV).value
        return loss_labeled(model, LV).value

    fitted = {}

    def fit_subset(subset):
        subset = tuple(sorted(subset))
        if subset in fitted:
            return fitted[subset][1]
        try:
            series = tune_series(LT, grids.I, grids.J, grids.eps_series, LV, UV, corrected, subset, grid)
        except SeriesError as exc:
            raise PipelineError("series", str(exc)) from exc
        ker = _stage("ker-nn", fit_nn_cde, LT, "kernel", [n for n in grids.N if n <= LT.n], LV, UV,
                     eps_grid=grids.eps_ker, corrected=corrected, covariate_subset=subset, grid=grid)
        stacked = _stage("stack", stack, [series, ker], LV, UV)
        stacked = StackedModel(stacked.components, stacked.alpha, stacked.objective_value, stacked.B_matrix,
                               stacked.b_vector, subset)
        loss = _stage("score", val_loss, stacked)
        fitted[subset] = (stacked, loss)
        return loss

    # baseline: weighted marginal density, bandwidth tuned on validation
    marg = [(val_loss(marginal_model(LT, e, corrected=corrected, grid=grid)), -e, e) for e in grids.eps_ker]
    baseline = min(marg)[0]
    ctrace = _select(fit_subset, list(range(labeled_train.d)), baseline, cde_selection)
    if not ctrace.subset:
        # nothing beat the marginal model; fall back to the best single covariate
        best = min(((fit_subset((c,)), c) for c in range(labeled_train.d)))
        ctrace.subset = (best[1],)
        ctrace.note = "no subset beat the marginal baseline; kept best single covariate"
    subset = tuple(sorted(ctrace.subset))
    model, vloss = fitted[subset]

    reports = {}
    if B_boot:
        reports["validation"] = (loss_shifted(model, LV, UV, B_boot=B_boot, seed=seed) if corrected
                                 else loss_labeled(model, LV, B_boot=B_boot, seed=seed))
    if labeled_test is not None and corrected and unlabeled_test is not None:
        LTe = labeled_test.with_weights(predict_beta(wmodel, labeled_test.covariates))
        reports["test_shift_corrected"] = loss_shifted(model, LTe, unlabeled_test, B_boot=B_boot, seed=seed)
    if unlabeled_test is not None and unlabeled_test.response is not None:
        reports["test_oracle"] = loss_oracle(model, unlabeled_test, B_boot=B_boot, seed=seed)
    components = {"series": model.components[0], "ker-nn": model.components[1]}
    info = {
        "effective_sample_size_train": effective_sample_size(w_tr),
        "baseline_loss": baseline,
    }
    return PipelineResult(model, wmodel, subset, btrace, ctrace, vloss, components, reports,
                          {"subsets": {",".join(map(str, k)): v[1] for k, v in fitted.items()}, **info})
