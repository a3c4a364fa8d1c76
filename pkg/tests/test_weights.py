import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdeshift.data import Sample
from cdeshift.simulate import OracleSpec, make_oracle
from cdeshift.weights import (
    WeightError, beta_loss, beta_loss_from_values, clean_zero_weights, effective_sample_size, fit_weights,
    predict_beta, select_M,
)


def beta_by_definition(L, U, M, x):
    """Direct transcription: radius to the M-th labeled neighbor, inclusive count."""
    d = np.sqrt(((L - x) ** 2).sum(axis=1))
    r = sorted(zip(d, range(len(d))))[M - 1][0]
    count = sum(1 for u in U if np.sqrt(((u - x) ** 2).sum()) <= r)
    return count * len(L) / (M * len(U))


def test_hand_example():
    m = fit_weights(np.array([[0.0], [0.4], [1.0]]), np.array([[0.1], [0.2], [0.9]]), 2)
    assert predict_beta(m, np.array([[0.0]])).tolist() == [1.0]


def test_full_coverage_is_one(rng):
    X = rng.normal(size=(8, 2))
    m = fit_weights(X, X, 8)
    np.testing.assert_allclose(predict_beta(m, X), 1.0)


def test_empty_ball_is_zero():
    m = fit_weights(np.array([[0.0], [0.1]]), np.array([[5.0]]), 1)
    assert predict_beta(m, np.array([[0.0]]))[0] == 0.0


def test_dimension_mismatch():
    m = fit_weights(np.zeros((3, 2)) + np.arange(3)[:, None], np.ones((2, 2)), 1)
    with pytest.raises(WeightError):
        predict_beta(m, np.zeros((1, 1)))


@pytest.mark.parametrize("seed", range(5))
def test_matches_definition(seed):
    r = np.random.default_rng(seed)
    L, U, Q = r.normal(size=(30, 2)), r.normal(0.5, 1, size=(25, 2)), r.normal(size=(10, 2))
    for M in (1, 3, 7):
        m = fit_weights(L, U, M)
        ref = [beta_by_definition(L, U, M, q) for q in Q]
        np.testing.assert_allclose(predict_beta(m, Q), ref, rtol=1e-12)


def test_coincident_query_counts_itself():
    m = fit_weights(np.array([[0.0], [1.0]]), np.array([[0.0], [2.0]]), 1)
    # radius 0 around the labeled point; the coincident unlabeled point is inside
    assert predict_beta(m, np.array([[0.0]]))[0] == 1.0


@given(st.floats(0.01, 100))
def test_scale_invariance(c):
    r = np.random.default_rng(2)
    L, U, Q = r.normal(size=(20, 2)), r.normal(size=(15, 2)), r.normal(size=(6, 2))
    a = predict_beta(fit_weights(L, U, 4), Q)
    b = predict_beta(fit_weights(c * L, c * U, 4), c * Q)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_duplicate_unlabeled_invariance(rng):
    L, U, Q = rng.normal(size=(20, 2)), rng.normal(size=(15, 2)), rng.normal(size=(6, 2))
    a = predict_beta(fit_weights(L, U, 3), Q)
    b = predict_beta(fit_weights(L, np.vstack([U, U]), 3), Q)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_beta_loss_examples():
    assert beta_loss_from_values(np.ones(4), np.ones(3)) == -1.0
    assert beta_loss_from_values(np.array([0.0, 2.0]), np.array([1.0, 1.0])) == 0.0


def test_beta_loss_empty():
    m = fit_weights(np.zeros((2, 1)), np.ones((2, 1)), 1)
    with pytest.raises(WeightError):
        beta_loss(m, Sample(np.zeros((0, 1))), Sample(np.ones((3, 1))))


def test_select_M_singleton_and_table(rng):
    L, U = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
    m = select_M(L[:30], U[:30], L[30:], U[30:], [1])
    assert m.M == 1
    m = select_M(L[:30], U[:30], L[30:], U[30:], [1, 2, 4, 8])
    assert [t[0] for t in m.loss_table] == [1, 2, 4, 8]
    best = min(l for _, l in m.loss_table)
    assert m.M == min(M for M, l in m.loss_table if l == best)
    for M, l in m.loss_table:
        ref = beta_loss(fit_weights(L[:30], U[:30], M), L[30:], U[30:])
        assert l == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_select_M_ties_to_smaller():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    m = select_M(X, X, X, X, [4, 2, 1])
    # identical labeled and unlabeled points give loss -1 for every M that covers the same set
    assert m.M == min(M for M, l in m.loss_table if l == min(t[1] for t in m.loss_table))


def test_select_M_no_shift_mean_near_one():
    o = make_oracle(OracleSpec(d=2, n_labeled=2000, n_unlabeled=2000, shift=0.0, seed=5))
    L, U = o.labeled.covariates, o.unlabeled.covariates
    m = select_M(L[:1400], U[:1400], L[1400:], U[1400:], list(range(1, 51)))
    assert 0.9 <= predict_beta(m, L[1400:]).mean() <= 1.1


def test_true_beta_loss_beats_fitted():
    o = make_oracle(OracleSpec(d=2, n_labeled=1500, n_unlabeled=1500, shift=0.8, seed=6))
    L, U = o.labeled.covariates, o.unlabeled.covariates
    LV, UV = L[1000:], U[1000:]
    bL, bU = o.beta(LV), o.beta(UV)
    true_loss = beta_loss_from_values(bL, bU)
    boot = []
    for b in range(200):
        r = np.random.default_rng([0, b])
        i, j = r.integers(0, len(LV), len(LV)), r.integers(0, len(UV), len(UV))
        boot.append(beta_loss_from_values(bL[i], bU[j]))
    se = np.std(boot)
    for M in (1, 4, 16, 64):
        assert true_loss <= beta_loss(fit_weights(L[:1000], U[:1000], M), LV, UV) + 3 * se


def test_beta_loss_monotone_in_noise():
    means = []
    for scale in (0.0, 0.2, 0.5, 1.0):
        vals = []
        for seed in range(20):
            o = make_oracle(OracleSpec(d=1, n_labeled=400, n_unlabeled=400, shift=0.5, seed=seed))
            r = np.random.default_rng(seed + 100)
            bL = np.maximum(o.beta(o.labeled.covariates) + scale * r.normal(size=400), 0)
            bU = np.maximum(o.beta(o.unlabeled.covariates) + scale * r.normal(size=400), 0)
            vals.append(beta_loss_from_values(bL, bU))
        means.append(np.mean(vals))
    assert all(b >= a for a, b in zip(means, means[1:]))


def test_effective_sample_size():
    assert effective_sample_size([1, 1, 1, 1]) == 4
    assert effective_sample_size([2, 0, 0, 0]) == 1
    assert effective_sample_size([1, 3]) == pytest.approx(1.6)
    with pytest.raises(WeightError):
        effective_sample_size([0, 0])


def test_clean_everything_nonzero(rng):
    X = rng.normal(size=(60, 1))
    pool = Sample(np.vstack([X, X + 1e-3]), np.full(120, 0.5))
    cur = Sample(X, np.full(60, 0.5))
    res = clean_zero_weights(pool, cur, Sample(X.copy()), 50, prelim_M_grid=(40,))
    assert res.sample.n == 50 and res.zero_fraction == 0.0


def test_clean_pool_must_be_larger(rng):
    s = Sample(rng.normal(size=(20, 1)), np.full(20, 0.5))
    with pytest.raises(WeightError):
        clean_zero_weights(s, s, Sample(rng.normal(size=(20, 1))), 10)


def test_clean_not_enough_rows_reports_size(rng):
    cur = Sample(rng.normal(size=(30, 1)), np.full(30, 0.5))
    pool = Sample(np.vstack([cur.covariates, np.full((30, 1), 50.0)]), np.full(60, 0.5))
    with pytest.raises(WeightError, match="only"):
        clean_zero_weights(pool, cur, Sample(rng.normal(size=(30, 1))), 59, prelim_M_grid=(1,))
