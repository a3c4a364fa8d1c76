import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdeshift.grid import (
    DensityGrid, GridError, cdf, expected_functional, normalize, quantile, read_catalog, squared_integral,
    trapezoid_weights, uniform_grid, write_catalog,
)

G = 200
z = uniform_grid(G)


def dens(values, normalized=False):
    return DensityGrid(z, np.asarray(values, dtype=float), normalized)


def test_uniform_grid_shape():
    assert z[0] == 0 and z[-1] == 1 and z.size == 200
    np.testing.assert_allclose(np.diff(z), 1 / 199, atol=1e-12)


def test_nonuniform_grid_rejected():
    with pytest.raises(GridError):
        DensityGrid(np.array([0, 0.2, 1.0]), np.ones(3))


def test_normalize_constant():
    np.testing.assert_allclose(normalize(dens(np.full(G, 2.0))).values, 1.0)


def test_normalize_negative_region():
    raw = np.where(z < 0.5, -1.0, 3.0)
    d = normalize(dens(raw))
    assert np.all(d.values[z < 0.5] == 0)
    assert abs(d.integral() - 1) < 1e-12
    # knots with z >= 0.5 start at index 100; the straddling cell holds half a trapezoid
    h = 1 / 199
    mass = 3.0 * (z[-1] - z[100]) + 3.0 * h / 2
    np.testing.assert_allclose(d.values[150], 3.0 / mass, rtol=1e-12)
    assert abs(d.values[150] - 2.0) < 0.02


def test_normalize_fallback_flag():
    d = normalize(dens(-np.ones(G)))
    np.testing.assert_array_equal(d.values, 1.0)
    assert bool(d.fallback)


def test_normalize_rejects_nonfinite():
    v = np.ones(G)
    v[3] = np.nan
    with pytest.raises(GridError):
        normalize(dens(v))


@given(arrays(np.float64, G, elements=st.floats(-5, 5)))
def test_normalize_idempotent_and_valid(v):
    d = normalize(dens(v))
    assert np.all(d.values >= 0)
    assert abs(d.integral() - 1) < 1e-9
    np.testing.assert_allclose(normalize(d).values, d.values, rtol=1e-12, atol=1e-12)


def test_cdf_quantile_uniform():
    u = dens(np.ones(G), True)
    assert abs(cdf(u, 0.25) - 0.25) < 1e-12
    assert abs(quantile(u, 0.25) - 0.25) < 1e-12


def test_cdf_symmetric():
    d = normalize(dens(np.exp(-((z - 0.5) ** 2) / 0.02)))
    assert abs(cdf(d, 0.5) - 0.5) < 1e-12


def test_triangle_quantiles():
    d = normalize(dens(1 - np.abs(z - 0.5) * 2))
    assert abs(quantile(d, 0.5) - 0.5) < 1e-12
    # cumulative-trapezoid oracle, then linear inversion
    C = np.concatenate([[0], np.cumsum((d.values[1:] + d.values[:-1]) / 2 * np.diff(z))])
    i = np.searchsorted(C, 0.25)
    ref = z[i - 1] + (0.25 - C[i - 1]) / (C[i] - C[i - 1]) * (z[i] - z[i - 1])
    assert abs(quantile(d, 0.25) - ref) < 1e-14
    assert abs(ref - np.sqrt(0.125)) < 1e-4


def test_cdf_requires_normalized():
    with pytest.raises(GridError):
        cdf(dens(np.ones(G)), 0.3)


@given(arrays(np.float64, G, elements=st.floats(0, 5)))
def test_cdf_properties(v):
    d = normalize(dens(v))
    grid_cdf = cdf(DensityGrid(z, np.tile(d.values, (G, 1)), True), z)
    assert np.all(np.diff(grid_cdf) >= -1e-15)
    assert abs(cdf(d, 0.0)) < 1e-9 and abs(cdf(d, 1.0) - 1) < 1e-9
    assert squared_integral(d) >= 1 - 1e-9


def test_quantile_inverts_cdf_on_positive_density():
    d = normalize(dens(1 + z))
    for t in (0.1, 0.37, 0.8):
        assert abs(quantile(d, cdf(d, t)) - t) < 1e-12


def test_squared_integral_examples():
    assert abs(squared_integral(dens(np.ones(G), True)) - 1) < 1e-12
    assert squared_integral(dens(np.zeros(G))) == 0
    step = np.where(z < 0.5, 2.0, 0.0)
    coarse = squared_integral(dens(step))
    fine_z = uniform_grid(20000)
    fine = squared_integral(DensityGrid(fine_z, np.where(fine_z < 0.5, 2.0, 0.0)))
    # error is confined to the single cell holding the jump
    assert abs(coarse - 2) <= 4 * (1 / 199) and abs(fine - 2) <= 4 * (1 / 19999)


def test_squared_integral_uniform_is_minimum():
    assert abs(squared_integral(normalize(dens(np.ones(G)))) - 1) < 1e-12
    assert squared_integral(normalize(dens(1 + 0.01 * z))) > 1


def test_expected_functional():
    d = normalize(dens(np.exp(-((z - 0.5) ** 2) / 0.05)))
    assert abs(expected_functional(d, np.ones(G)) - 1) < 1e-12
    assert abs(expected_functional(d, z) - 0.5) < 1e-12
    with pytest.raises(GridError):
        expected_functional(d, np.ones(G - 1))


def test_expected_functional_fine_grid_oracle():
    f = lambda t: np.exp(-((t - 0.3) ** 2) / 0.01) + 0.2  # noqa: E731
    g = lambda t: np.sin(3 * t) + t**2  # noqa: E731
    d = normalize(dens(f(z)))
    fz = uniform_grid(20000)
    ref = expected_functional(normalize(DensityGrid(fz, f(fz))), g(fz))
    assert abs(expected_functional(d, g(z)) - ref) < 1e-4


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_expected_functional_linear(a, b):
    r = np.random.default_rng(1)
    d = normalize(dens(r.random(G)))
    g1, g2 = r.normal(size=G), r.normal(size=G)
    lhs = expected_functional(d, a * g1 + b * g2)
    rhs = a * expected_functional(d, g1) + b * expected_functional(d, g2)
    assert abs(lhs - rhs) < 1e-12


def test_trapezoid_weights_sum():
    assert abs(trapezoid_weights(z).sum() - 1) < 1e-15


def test_catalog_roundtrip(tmp_path):
    r = np.random.default_rng(3)
    d = normalize(DensityGrid(z, r.random((4, G))))
    assert write_catalog(d, tmp_path / "c.csv") == 4
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "200,0,1"
    back = read_catalog(tmp_path / "c.csv")
    np.testing.assert_allclose(back.values, d.values, rtol=1e-11)
    assert back.normalized
