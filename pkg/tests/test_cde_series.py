import numpy as np
import pytest
from scipy import linalg

from cdeshift import cde_series
from cdeshift.cde_series import (
    SeriesError, cosine_basis, extrapolation_fraction, fit_series, nystrom_eval, predict_series, spectral_basis,
    tune_series,
)
from cdeshift.data import Sample
from cdeshift.grid import cdf, normalize, DensityGrid, uniform_grid


def definition_fit(X, zz, eps, I, J):
    n = X.shape[0]
    G = np.exp(-((X[:, None, :] - X[None, :, :]) ** 2).sum(-1) / (4 * eps))
    vals, vecs = np.linalg.eigh(G)
    vals, vecs = vals[::-1][:J], vecs[:, ::-1][:, :J]
    for j in range(J):
        k = np.argmax(np.abs(vecs[:, j]))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    phi = np.array([[1.0 if i == 0 else np.sqrt(2) * np.cos(np.pi * i * t) for t in zz] for i in range(I)])
    alpha = phi @ (np.sqrt(n) * vecs) / n
    return vals, vecs, alpha


def definition_nystrom(X, vals, vecs, eps, x):
    n = X.shape[0]
    k = np.exp(-((X - x) ** 2).sum(-1) / (4 * eps))
    return np.sqrt(n) / vals * (vecs.T @ k)


def test_cosine_basis_orthonormal():
    zz = uniform_grid(4001)
    P = cosine_basis(zz, 6)
    from cdeshift.grid import trapezoid_weights
    gram = (P * trapezoid_weights(zz)) @ P.T
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-5)


def test_rank_one_gram():
    S = Sample(np.zeros((2, 1)), [0.2, 0.4])
    with pytest.raises(SeriesError, match="rank 1"):
        fit_series(S, 1.0, 2, 2)
    m = fit_series(S, 1.0, 2, 1)
    assert m.eigvals[0] == pytest.approx(2.0)


def test_orthonormal_at_training(rng):
    S = Sample(rng.normal(size=(200, 2)), rng.random(200))
    m = fit_series(S, 1.0, 3, 20)
    psi = m.basis.at_training(20)
    assert np.max(np.abs(psi.T @ psi / 200 - np.eye(20))) < 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_coefficients_match_definition(seed):
    r = np.random.default_rng(seed)
    X, zz = r.normal(size=(30, 2)), r.random(30)
    m = fit_series(Sample(X, zz), 0.8, 4, 6)
    vals, vecs, alpha = definition_fit(X, zz, 0.8, 4, 6)
    np.testing.assert_allclose(m.eigvals, vals, rtol=1e-10)
    np.testing.assert_allclose(m.coeffs, alpha, atol=1e-8)
    x = r.normal(size=2)
    np.testing.assert_allclose(nystrom_eval(m, x[None])[0], definition_nystrom(X, vals, vecs, 0.8, x), atol=1e-10)


def test_nystrom_at_training_points(rng):
    X = rng.normal(size=(40, 2))
    m = fit_series(Sample(X, rng.random(40)), 0.5, 2, 8)
    np.testing.assert_allclose(nystrom_eval(m, X), m.basis.at_training(8), atol=1e-10)


def test_nystrom_far_point_vanishes(rng):
    X = rng.normal(size=(40, 1))
    eps = 0.5
    m = fit_series(Sample(X, rng.random(40)), eps, 2, 5)
    far = np.array([[X.max() + 20 * np.sqrt(eps)]])
    assert np.max(np.abs(nystrom_eval(m, far))) < 1e-6
    assert extrapolation_fraction(m, far) == 1.0


def test_constant_expansion_is_uniform(rng):
    m = fit_series(Sample(rng.normal(size=(20, 1)), rng.random(20)), 1.0, 1, 1)
    np.testing.assert_allclose(predict_series(m, rng.normal(size=(3, 1))).values, 1.0, rtol=1e-12)


def test_predict_matches_definition(rng):
    X, zz = rng.normal(size=(25, 2)), rng.random(25)
    m = fit_series(Sample(X, zz), 1.0, 5, 4)
    vals, vecs, alpha = definition_fit(X, zz, 1.0, 5, 4)
    x = rng.normal(size=2)
    psi = definition_nystrom(X, vals, vecs, 1.0, x)
    g = uniform_grid()
    raw = np.array([sum(alpha[i, j] * (1 if i == 0 else np.sqrt(2) * np.cos(np.pi * i * t)) * psi[j]
                        for i in range(5) for j in range(4)) for t in g])
    ref = normalize(DensityGrid(g, raw)).values
    np.testing.assert_allclose(predict_series(m, x[None]).values[0], ref, atol=1e-8)


def test_permutation_invariance(rng):
    X, zz = rng.normal(size=(30, 2)), rng.random(30)
    p = rng.permutation(30)
    a = fit_series(Sample(X, zz), 0.7, 4, 5)
    b = fit_series(Sample(X[p], zz[p]), 0.7, 4, 5)
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-10)


def test_eigen_floor_truncates():
    X = np.repeat(np.array([[0.0], [1.0]]), 5, axis=0)
    b = spectral_basis(X, 0.3, 5)
    assert b.rank == 2


def _oracle_data(seed, n):
    r = np.random.default_rng(seed)
    from scipy.stats import truncnorm
    x = r.random(n)
    zz = truncnorm.rvs(-x / 0.05, (1 - x) / 0.05, loc=x, scale=0.05, random_state=r)
    return Sample(x[:, None], zz)


def test_tuned_series_beats_uniform():
    from cdeshift.losses import loss_oracle
    tr, va, te = _oracle_data(0, 1000), _oracle_data(1, 300), _oracle_data(2, 1000)
    m = tune_series(tr, [10, 20, 30], [5, 10, 20], [0.01, 0.05], va, corrected=False)
    unif = lambda X: DensityGrid(uniform_grid(), np.ones((len(X), 200)), True)  # noqa: E731
    assert loss_oracle(m, te).value <= loss_oracle(unif, te).value - 0.5


def test_symmetric_target_cdf_half():
    tr, va = _oracle_data(3, 1500), _oracle_data(4, 300)
    m = tune_series(tr, [10, 20], [5, 10], [0.02], va, corrected=False)
    c = cdf(m.predict(np.array([[0.5]])).row(0), 0.5)
    assert 0.45 <= c <= 0.55


def test_one_decomposition_per_epsilon(rng):
    S = Sample(rng.normal(size=(60, 2)), rng.random(60), weights=np.ones(60))
    before = cde_series.decomposition_count
    tune_series(S, [1, 2, 3, 5], [4], [0.5], S, S.unlabeled())
    assert cde_series.decomposition_count - before == 1
    before = cde_series.decomposition_count
    tune_series(S, [1, 2], [2, 4], [0.5, 1.0, 2.0], S, S.unlabeled())
    assert cde_series.decomposition_count - before == 3


def test_tune_singleton_and_table(rng):
    S = Sample(rng.normal(size=(50, 2)), rng.random(50), weights=np.ones(50))
    m = tune_series(S, [3], [4], [1.0], S, S.unlabeled())
    assert (m.I, m.J, m.epsilon) == (3, 4, 1.0)
    ref = fit_series(S, 1.0, 3, 4)
    np.testing.assert_allclose(m.coeffs, ref.coeffs, atol=1e-12)


def test_tune_ties_prefer_small_then_wide(rng):
    # constant response: every I >= 1 gives the uniform density, so all losses tie
    S = Sample(rng.normal(size=(30, 1)), np.full(30, 0.5), weights=np.ones(30))
    m = tune_series(S, [1], [1, 2], [0.5, 2.0], S, S.unlabeled())
    assert (m.I, m.J, m.epsilon) == (1, 1, 2.0)
