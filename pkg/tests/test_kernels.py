import os
import subprocess
import sys

import numpy as np
import pytest

from cdeshift import _kernels as K

NAMES = ["sqdist", "knn", "radius_count", "gaussian_gram", "kernel_grid", "hist_grid"]
needs_numba = pytest.mark.skipif(not K.NUMBA_OK, reason="numba unavailable")


def _args(name, r):
    X = r.normal(size=(37, 3))
    Q = r.normal(size=(11, 3))
    if name == "sqdist":
        return Q, X
    if name == "knn":
        return X, Q, 5
    if name == "radius_count":
        return X, Q, r.random(11) * 3
    if name == "gaussian_gram":
        return Q, X, 0.7
    zn = r.random((11, 6))
    wn = r.random((11, 6))
    grid = np.linspace(0, 1, 50)
    return (zn, wn, grid, 0.01) if name == "kernel_grid" else (zn, wn, grid, 7)


@needs_numba
@pytest.mark.parametrize("name", NAMES)
def test_backends_agree(name):
    r = np.random.default_rng(4)
    args = _args(name, r)
    a = K.NUMPY_KERNELS[name](*args)
    b = K.NUMBA_KERNELS[name](*args)
    for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("table", ["numpy", "numba"])
def test_knn_ties_break_by_index(table):
    if table == "numba" and not K.NUMBA_OK:
        pytest.skip("numba unavailable")
    fn = (K.NUMPY_KERNELS if table == "numpy" else K.NUMBA_KERNELS)["knn"]
    X = np.array([[1.0], [-1.0], [1.0], [0.0]])
    idx, kth = fn(X, np.array([[0.0]]), 3)
    assert idx.tolist() == [[3, 0, 1]]
    assert kth[0] == 1.0


def test_radius_inclusive():
    Y = np.array([[0.0], [0.5], [0.75]])
    assert K.radius_count(Y, np.array([[0.0]]), np.array([0.25])).tolist() == [2]


def test_hist_grid_last_bin_closed():
    out = K.hist_grid(np.array([[1.0, 0.5, 0.0]]), np.ones((1, 3)), np.array([0.0, 0.49, 0.5, 1.0]), 2)
    # bins [0,0.5) holds 0.0; [0.5,1] holds 0.5 and 1.0
    np.testing.assert_allclose(out, [[2 / 3, 2 / 3, 4 / 3, 4 / 3]])


def test_env_flag_forces_numpy():
    env = dict(os.environ, CDESHIFT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import cdeshift._kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
