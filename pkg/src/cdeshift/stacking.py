"""Convex stacking of density estimators and covariate subset search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .grid import DensityGrid, GridError, normalize, trapezoid_weights, value_at
from .losses import densities

QP_TOL = 1e-10
QP_MAX_ITER = 100_000
SELECT_TOL = 1e-6


class StackError(ValueError):
    pass


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{a >= 0, sum(a) = 1}`` (sort-based, exact)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def qp_objective(alpha, Bm, b) -> float:
    return float(alpha @ Bm @ alpha - 2.0 * alpha @ b)


def _segment_minimizer(Bm, b) -> np.ndarray:
    """Closed-form minimizer for p = 2 over ``alpha = (t, 1 - t)``, ``t`` in [0, 1]."""
    # objective(t) = q t^2 + l t + const
    q = Bm[0, 0] + Bm[1, 1] - 2 * Bm[0, 1]
    lin = 2 * (Bm[0, 1] - Bm[1, 1]) - 2 * (b[0] - b[1])
    if q > 1e-14 * max(1.0, abs(Bm).max()):
        t = np.clip(-lin / (2 * q), 0.0, 1.0)
    elif abs(lin) <= 1e-14 * max(1.0, abs(Bm).max(), abs(b).max()):
        t = 0.5
    else:
        t = 0.0 if lin > 0 else 1.0
    return np.array([t, 1.0 - t])


def _min_norm_optimum(alpha, Bm, b, iters=20_000):
    """Smallest-norm point of the optimal face containing ``alpha``.

    Optimal points of a convex quadratic over the simplex share ``B alpha``
    and ``b . alpha``; Dykstra's alternating projections between that affine
    set and the nonnegative orthant find the projection of the origin.
    """
    p = alpha.size
    A = np.vstack([np.ones(p), Bm, b])
    rhs = A @ alpha
    U, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-10 * s[0]))
    if rank >= p:
        return alpha
    pinv = np.linalg.pinv(A, rcond=1e-10)

    def proj_affine(x):
        return x - pinv @ (A @ x - rhs)

    x = np.zeros(p)
    pa = np.zeros(p)
    qa = np.zeros(p)
    for _ in range(iters):
        y = proj_affine(x + pa)
        pa = x + pa - y
        x_new = np.maximum(y + qa, 0.0)
        qa = y + qa - x_new
        if np.max(np.abs(x_new - x)) < 1e-15:
            x = x_new
            break
        x = x_new
    x = project_simplex(proj_affine(x))
    return x


@dataclass(frozen=True)
class QPResult:
    alpha: np.ndarray
    objective: float
    iterations: int
    converged: bool


def solve_simplex_qp(Bm, b, tol: float = QP_TOL, max_iter: int = QP_MAX_ITER) -> QPResult:
    """Minimize ``a' B a - 2 a' b`` over the probability simplex.

    Projected gradient descent from the uniform point with step ``1/L``;
    stops when the gradient-mapping norm is at most ``tol``.  Flat optimal
    faces resolve to their minimum-norm (most uniform) point.  For ``p = 2``
    the answer is checked against the closed-form segment minimizer.
    """
    Bm = np.asarray(Bm, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    p = b.size
    if Bm.shape != (p, p):
        raise StackError("B must be p x p with p = len(b)")
    Bm = (Bm + Bm.T) / 2
    lmax = float(np.linalg.eigvalsh(Bm)[-1]) if p else 0.0
    step = 1.0 / (2.0 * lmax) if lmax > 0 else 1.0
    a = np.full(p, 1.0 / p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (Bm @ a - b)
        a_new = project_simplex(a - step * grad)
        gm = np.linalg.norm(a - a_new) / step
        a = a_new
        if gm <= tol:
            converged = True
            break
    a = _min_norm_optimum(a, Bm, b)
    if p == 2:
        ref = _segment_minimizer(Bm, b)
        if qp_objective(ref, Bm, b) < qp_objective(a, Bm, b) - 1e-12 or np.max(np.abs(ref - a)) > 1e-6:
            a = ref
    return QPResult(a, qp_objective(a, Bm, b), it, converged)


def stacking_system(component_grids_U, component_points_L, weights_L):
    """Gram matrix of components over unlabeled rows and weighted point averages.

    ``component_grids_U``: list of ``(n_U, G)`` arrays on the same grid;
    ``component_points_L``: list of ``(n_L,)`` point values ``f_i(z_k|x_k)``.
    """
    p = len(component_grids_U)
    G = component_grids_U[0].shape[1]
    tw = trapezoid_weights(np.linspace(0.0, 1.0, G))
    Bm = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            Bm[i, j] = Bm[j, i] = np.mean((component_grids_U[i] * component_grids_U[j]) @ tw)
    w = np.asarray(weights_L, dtype=np.float64)
    bvec = np.array([np.mean(pts * w) for pts in component_points_L])
    return Bm, bvec


@dataclass(frozen=True, eq=False)
class StackedModel:
    components: tuple
    alpha: np.ndarray
    objective_value: float = float("nan")
    B_matrix: np.ndarray | None = None
    b_vector: np.ndarray | None = None
    covariate_subset: tuple[int, ...] = ()
    loss_table: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.size != len(self.components):
            raise StackError("one mixing weight per component required")
        if np.any(a < -1e-9) or abs(a.sum() - 1.0) > 1e-9:
            raise StackError("mixing weights must lie on the probability simplex")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def method(self) -> str:
        return "stacked"

    def hyperparameters(self) -> dict:
        return {"alpha": [float(x) for x in self.alpha]}

    def predict(self, X) -> DensityGrid:
        return predict_stacked(self, X)


def stack(components, labeled_val: Sample, unlabeled_val: Sample, weights=None) -> StackedModel:
    """Choose convex mixing weights minimizing the shift-corrected validation loss."""
    if len(components) < 2:
        raise StackError("stacking needs at least two components")
    if labeled_val.n == 0 or unlabeled_val.n == 0 or labeled_val.response is None:
        raise StackError("validation sets must be nonempty; labeled rows need responses")
    w = labeled_val.weights if weights is None else np.asarray(weights, dtype=np.float64)
    if w is None:
        w = np.ones(labeled_val.n)
    grids_U, points_L = [], []
    for comp in components:
        dU = densities(comp, unlabeled_val.covariates)
        dL = densities(comp, labeled_val.covariates)
        grids_U.append(dU.values)
        points_L.append(value_at(dL, labeled_val.response))
    Bm, bvec = stacking_system(grids_U, points_L, w)
    res = solve_simplex_qp(Bm, bvec)
    return StackedModel(tuple(components), res.alpha, res.objective, Bm, bvec)


def predict_stacked(model: StackedModel, X) -> DensityGrid:
    grids = [densities(c, X) for c in model.components]
    g0 = grids[0].grid
    for d in grids[1:]:
        if d.G != g0.size:
            raise GridError("stacked components use different grids")
    vals = sum(a * d.values for a, d in zip(model.alpha, grids))
    fb = np.logical_or.reduce([d.fallback for d in grids])
    out = DensityGrid(g0, vals, True, fb)
    integ = out.integral()
    if np.max(np.abs(integ - 1.0)) > 1e-6:
        out = normalize(DensityGrid(g0, vals, False, fb))
    return out


# -- covariate subset search --------------------------------------------------


@dataclass
class SelectionTrace:
    steps: list = field(default_factory=list)  # (covariate, loss after adding it)
    subset: tuple = ()
    baseline: float = float("inf")
    mode: str = "forward"
    note: str = ""

    @property
    def loss(self) -> float:
        return self.steps[-1][1] if self.steps else self.baseline

    def to_dict(self) -> dict:
        return {
            "steps": [[c, float(l)] for c, l in self.steps],
            "subset": list(self.subset),
            "baseline": None if not np.isfinite(self.baseline) else float(self.baseline),
            "mode": self.mode,
            "note": self.note,
        }


def forward_select(fit_and_score, candidates, baseline: float = float("inf"), tol: float = SELECT_TOL) -> SelectionTrace:
    """Greedy forward search.

    ``fit_and_score(subset) -> loss`` for a tuple of candidates.  Each round
    adds the candidate with the lowest loss; the search stops once the best
    addition fails to beat the current loss by more than ``tol``.  With an
    infinite ``baseline`` the best single candidate is always accepted.
    """
    candidates = list(candidates)
    if not candidates:
        raise StackError("no candidate covariates")
    trace = SelectionTrace(baseline=float(baseline), mode="forward")
    current, chosen = float(baseline), []
    remaining = list(candidates)
    while remaining:
        scored = [(fit_and_score(tuple(chosen + [c])), i, c) for i, c in enumerate(remaining)]
        loss, _, c = min(scored, key=lambda t: (t[0], t[1]))
        if not (np.isinf(current) or loss < current - tol):
            break
        chosen.append(c)
        remaining.remove(c)
        trace.steps.append((c, float(loss)))
        current = loss
    trace.subset = tuple(chosen)
    return trace


def exhaustive_select(fit_and_score, candidates, baseline: float = float("inf"), max_d: int = 10) -> SelectionTrace:
    """Score every nonempty subset and keep the best (ties: smaller, then earlier)."""
    candidates = list(candidates)
    if not candidates:
        raise StackError("no candidate covariates")
    if len(candidates) > max_d:
        raise StackError(f"exhaustive search limited to {max_d} candidates")
    best = None
    for k in range(1, len(candidates) + 1):
        for combo in itertools.combinations(candidates, k):
            loss = fit_and_score(tuple(combo))
            if best is None or loss < best[0]:
                best = (loss, combo)
    trace = SelectionTrace(baseline=float(baseline), mode="exhaustive")
    if best[0] < baseline - SELECT_TOL or np.isinf(baseline):
        trace.subset = tuple(best[1])
        trace.steps = [(c, float(best[0])) for c in best[1]]
    return trace
