import numpy as np
import pytest

from cdeshift.data import Sample
from cdeshift.grid import DensityGrid, normalize, uniform_grid
from cdeshift.losses import (
    LossError, LossReport, bootstrap_se, evaluate, loss_labeled, loss_oracle, loss_shifted,
)
from cdeshift.simulate import OracleSpec, make_oracle

g = uniform_grid()


def uniform(X):
    return DensityGrid(g, np.ones((len(X), g.size)), True)


def tent(X):
    """Density 2 - 4|z - 0.5| renormalized, same for every x."""
    v = normalize(DensityGrid(g, np.maximum(2 - 4 * np.abs(g - 0.5), 0))).values
    return DensityGrid(g, np.tile(v, (len(X), 1)), True)


def test_uniform_loss_minus_one(rng):
    S = Sample(rng.normal(size=(17, 2)), rng.random(17))
    assert loss_labeled(uniform, S).value == pytest.approx(-1.0, abs=1e-12)
    assert loss_oracle(uniform, S).value == pytest.approx(-1.0, abs=1e-12)


def test_single_point_hand_value():
    S = Sample(np.zeros((1, 1)), [0.5])
    d = tent(S.covariates)
    sq = (d.values[0] ** 2 * np.r_[0.5, np.ones(198), 0.5] / 199).sum()
    f = np.interp(0.5, g, d.values[0])
    assert loss_labeled(tent, S).value == pytest.approx(sq - 2 * f, abs=1e-9)


def test_shifted_coincides_with_labeled(rng):
    S = Sample(rng.normal(size=(20, 2)), rng.random(20))
    a = loss_labeled(tent, S).value
    b = loss_shifted(tent, S, S.unlabeled(), weights=np.ones(20)).value
    assert a == b


def test_uniform_shifted_uses_mean_weight(rng):
    S = Sample(rng.normal(size=(20, 2)), rng.random(20))
    w = rng.random(20) * 3
    U = Sample(rng.normal(size=(7, 2)))
    assert loss_shifted(uniform, S, U, weights=w).value == pytest.approx(1 - 2 * w.mean(), abs=1e-12)


def test_row_order_invariance(rng):
    S = Sample(rng.normal(size=(20, 2)), rng.random(20), weights=rng.random(20))
    U = Sample(rng.normal(size=(15, 2)))
    p, q = rng.permutation(20), rng.permutation(15)
    a = loss_shifted(tent, S, U).value
    b = loss_shifted(tent, S.take(p), U.take(q)).value
    assert a == pytest.approx(b, abs=1e-14)


def test_bootstrap_constant_zero():
    assert bootstrap_se(lambda i, j: 3.0, 10, 5, B_boot=20) == 0.0


def test_bootstrap_frozen_values(rng):
    # frozen computed value: replicate b uses default_rng([7, b])
    x = np.arange(10.0)
    se = bootstrap_se(lambda i, j: x[i].mean(), 10, 0, B_boot=50, seed=7)
    reps = [x[np.random.default_rng([7, b]).integers(0, 10, 10)].mean() for b in range(50)]
    assert se == np.std(reps)
    assert se == pytest.approx(0.7403377607551841, abs=1e-15)


def test_bootstrap_default_count():
    import inspect
    assert inspect.signature(bootstrap_se).parameters["B_boot"].default == 500


def test_bootstrap_shrinks_with_n():
    wins = 0
    for seed in range(10):
        o = make_oracle(OracleSpec(d=1, n_labeled=4000, n_unlabeled=50, seed=seed))
        small = loss_labeled(tent, o.labeled.take(np.arange(500)), B_boot=100, seed=seed).se
        big = loss_labeled(tent, o.labeled, B_boot=100, seed=seed).se
        wins += big < small
    assert wins >= 9


def test_true_density_beats_corruptions():
    wins = 0
    for seed in range(10):
        o = make_oracle(OracleSpec(d=1, n_labeled=500, n_unlabeled=500, shift=0.5, seed=seed))
        true = lambda X: o.true_density(X)  # noqa: E731
        smooth = lambda X: normalize(DensityGrid(g, o.true_density(X).values + 1.0))  # noqa: E731
        shifted = lambda X: o.true_density(X + 0.5)  # noqa: E731
        U = o.unlabeled
        t = loss_oracle(true, U).value
        wins += t < loss_oracle(smooth, U).value and t < loss_oracle(shifted, U).value
        wins_l = loss_labeled(true, o.labeled).value < loss_labeled(smooth, o.labeled).value
        assert wins_l or seed >= 9
    assert wins >= 9


def test_errors(rng):
    S = Sample(rng.normal(size=(3, 1)), rng.random(3))
    with pytest.raises(LossError):
        loss_labeled(uniform, Sample(np.zeros((0, 1)), np.zeros(0)))
    with pytest.raises(LossError):
        loss_oracle(uniform, S.unlabeled())
    with pytest.raises(LossError):
        loss_shifted(uniform, S, S.unlabeled())  # no weights
    with pytest.raises(LossError):
        evaluate(uniform, "nope", S)
    with pytest.raises(LossError):
        LossReport(0.0, "oracle", se=0.1, B_boot=1)


def test_unnormalized_predictor_rejected(rng):
    from cdeshift.grid import GridError
    S = Sample(rng.normal(size=(3, 1)), rng.random(3))
    with pytest.raises(GridError):
        loss_labeled(lambda X: DensityGrid(g, np.ones((len(X), 200))), S)


def test_mixture_loss_matches_quadratic_form(rng):
    from cdeshift.stacking import qp_objective, stacking_system
    from cdeshift.grid import value_at
    S = Sample(rng.normal(size=(30, 1)), rng.random(30), weights=rng.random(30))
    U = Sample(rng.normal(size=(25, 1)))
    comps = [uniform, tent]
    Bm, b = stacking_system([c(U.covariates).values for c in comps],
                            [value_at(c(S.covariates), S.response) for c in comps], S.weights)
    a = np.array([0.3, 0.7])
    mix = lambda X: DensityGrid(g, 0.3 * uniform(X).values + 0.7 * tent(X).values, True)  # noqa: E731
    assert loss_shifted(mix, S, U).value == pytest.approx(qp_objective(a, Bm, b), abs=1e-9)
