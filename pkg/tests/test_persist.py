import numpy as np
import pytest

from cdeshift.cde_nn import NnCdeModel, marginal_model
from cdeshift.cde_series import fit_series
from cdeshift.data import Sample
from cdeshift.persist import load_model, save_model
from cdeshift.stacking import StackedModel
from cdeshift.weights import fit_weights, predict_beta


@pytest.fixture
def sample(rng):
    X = rng.normal(size=(60, 2))
    return Sample(X, rng.random(60), weights=rng.random(60))


def _roundtrip(model, path):
    header = save_model(model, path, {"note": "x"})
    back, h2 = load_model(path)
    assert h2 == header and h2["note"] == "x"
    return back


def test_weights_roundtrip(tmp_path, rng):
    m = fit_weights(rng.normal(size=(20, 2)), rng.normal(size=(15, 2)), 3)
    back = _roundtrip(m, tmp_path / "w.npz")
    Q = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(predict_beta(back, Q), predict_beta(m, Q))


@pytest.mark.parametrize("variant,kw", [("histogram", {"B": 7}), ("kernel", {"epsilon": 0.004})])
def test_nn_roundtrip(tmp_path, sample, variant, kw, rng):
    m = NnCdeModel(sample.covariates, sample.response, sample.weights, variant, 9, **kw)
    back = _roundtrip(m, tmp_path / "m.npz")
    Q = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(back.predict(Q).values, m.predict(Q).values)


def test_series_and_stacked_roundtrip(tmp_path, sample, rng):
    s = fit_series(sample, 0.7, 4, 5)
    k = NnCdeModel(sample.covariates, sample.response, sample.weights, "kernel", 9, epsilon=0.004)
    mg = marginal_model(sample, 0.002)
    st = StackedModel((s, k, mg), [0.2, 0.5, 0.3], 0.0, np.eye(3), np.zeros(3), (0, 1))
    back = _roundtrip(st, tmp_path / "st.npz")
    Q = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(back.predict(Q).values, st.predict(Q).values)
    assert back.components[2].method == "marginal"
    assert back.covariate_subset == (0, 1)
