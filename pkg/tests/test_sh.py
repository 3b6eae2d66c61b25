import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from hrtf_dunet import sh
from hrtf_dunet.data import SphericalDirection
from hrtf_dunet.errors import ContainerError, DataError


def scipy_real_sh(order, az, el):
    """Real orthonormal SH from scipy's complex ones, Condon-Shortley removed."""
    theta = np.pi / 2 - el
    out = np.zeros((az.size, (order + 1) ** 2))
    for l in range(order + 1):
        for m in range(-l, l + 1):
            y = special.sph_harm_y(l, abs(m), theta, az)
            cs = (-1.0) ** abs(m)
            if m > 0:
                out[:, l * l + l + m] = math.sqrt(2) * cs * y.real
            elif m < 0:
                out[:, l * l + l + m] = math.sqrt(2) * cs * y.imag
            else:
                out[:, l * l + l] = y.real
    return out


def test_y00_constant():
    d = SphericalDirection(1.3, -0.4)
    assert sh.real_sh_basis(0, d)[0] == pytest.approx(1 / math.sqrt(4 * math.pi), abs=1e-15)
    assert sh.real_sh_basis(0, d)[0] == pytest.approx(0.2820948, abs=1e-7)


def test_y10_at_pole():
    y = sh.real_sh_basis(1, SphericalDirection(0.0, math.pi / 2))
    assert y[sh.acn(1, 0)] == pytest.approx(math.sqrt(3 / (4 * math.pi)), abs=1e-15)
    assert y[sh.acn(1, 0)] == pytest.approx(0.4886025, abs=1e-7)


def test_basis_matches_scipy(rng):
    az = rng.uniform(0, 2 * np.pi, 50)
    el = rng.uniform(-np.pi / 2, np.pi / 2, 50)
    ours = sh.real_sh_basis(6, np.column_stack([az, el]))
    np.testing.assert_allclose(ours, scipy_real_sh(6, az, el), atol=1e-12)


def test_quadrature_gram_identity():
    y = sh.real_sh_basis(4, sh.fibonacci_grid(5000))
    gram = y.T @ y * (4 * np.pi / 5000)
    assert np.max(np.abs(gram - np.eye(25))) < 5e-3


@pytest.mark.parametrize("p,order", [(793, 27), (3, 0), (27, 4), (1, 0), (4, 1), (100, 9)])
def test_max_order_for_points(p, order):
    assert sh.max_order_for_points(p) == order


def test_fibonacci_grid_properties():
    assert sh.fibonacci_grid(1).shape == (1, 3)
    v = sh.unit_vectors(sh.fibonacci_grid(100))
    ang = np.arccos(np.clip(v @ v.T, -1, 1))
    np.fill_diagonal(ang, np.inf)
    assert ang.min() >= 0.7 * math.sqrt(4 * math.pi / 100)
    assert np.linalg.norm(v.mean(axis=0)) < 0.05
    np.testing.assert_array_equal(sh.fibonacci_grid(100), sh.fibonacci_grid(100))


def test_round_trip_exact_order(rng, grid100):
    c = rng.normal(size=(sh.num_coeffs(4), 7, 2))
    vals = sh.sht_eval(sh.ShCoeffTensor(4, c), grid100)
    fit = sh.sht_fit(vals, grid100, 4, lam=0.0)
    np.testing.assert_allclose(fit.coeffs, c, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(sh.sht_eval(fit, grid100), vals, atol=1e-9)


def test_constant_field(rng):
    grid = sh.fibonacci_grid(40)
    fit = sh.sht_fit(np.full((40, 3, 2), 2.5), grid, 3, lam=0.0)
    assert fit.coeffs[0] == pytest.approx(np.full((3, 2), 2.5 * math.sqrt(4 * math.pi)), abs=1e-10)
    np.testing.assert_allclose(fit.coeffs[1:], 0.0, atol=1e-10)


def test_fit_is_projection(rng, grid100):
    vals = rng.normal(size=(100, 5, 2))
    c1 = sh.sht_fit(vals, grid100, 5)
    c2 = sh.sht_fit(sh.sht_eval(c1, grid100), grid100, 5)
    np.testing.assert_allclose(c2.coeffs, c1.coeffs, atol=1e-10)


def test_rank_deficient_without_ridge_raises():
    grid = sh.fibonacci_grid(3)
    with pytest.raises(DataError):
        sh.sht_fit(np.zeros((3, 1, 2)), grid, 1, lam=0.0)


def test_duplicate_positions_rejected():
    grid = np.array([[0.1, 0.2], [0.1, 0.2], [1.0, 0.0]])
    with pytest.raises(DataError):
        sh.sht_fit(np.zeros((3, 1, 2)), grid, 0)


def test_three_points_order_zero_is_regularised_mean(rng):
    grid = sh.fibonacci_grid(3)
    vals = rng.normal(size=(3, 4, 2))
    lam = sh.default_lambda(grid, 0)
    fit = sh.sht_fit(vals, grid, 0)
    y0 = 1 / math.sqrt(4 * math.pi)
    expected = y0 * vals.sum(axis=0) / (3 * y0 * y0 + lam)
    np.testing.assert_allclose(fit.coeffs[0], expected, rtol=1e-12)
    field = sh.sht_eval(fit, sh.fibonacci_grid(20))
    np.testing.assert_allclose(field, np.broadcast_to(field[0], field.shape), atol=1e-12)


def test_ridge_matches_normal_equations(rng, grid100):
    pts = grid100[:12]
    y = sh.real_sh_basis(3, pts)
    v = rng.normal(size=(12, 2, 2))
    lam = 0.3
    c = sh.sht_fit(v, pts, 3, lam)
    direct = np.linalg.solve(y.T @ y + lam * np.eye(16), y.T @ v.reshape(12, -1))
    np.testing.assert_allclose(c.coeffs.reshape(16, -1), direct, atol=1e-10)


def test_default_lambda_only_for_sparse_fits(grid100):
    assert sh.default_lambda(grid100, 5) == 0.0
    pts = grid100[:27]
    y = sh.real_sh_basis(4, pts)
    assert sh.default_lambda(pts, 4) == pytest.approx(1e-6 * np.trace(y.T @ y) / 25)


def test_rotation_keeps_order_zero(rng):
    grid = sh.fibonacci_grid(64)
    c = np.zeros((sh.num_coeffs(3), 1, 2))
    c[:, 0, :] = rng.normal(size=(16, 2))
    vals = sh.sht_eval(sh.ShCoeffTensor(3, c), grid)
    # rotate about z by shifting azimuth of both grid and field
    rot = grid.copy()
    rot[:, 0] += 0.7
    f0 = sh.sht_fit(vals, grid, 3, 0.0).coeffs[0]
    f1 = sh.sht_fit(vals, rot, 3, 0.0).coeffs[0]
    np.testing.assert_allclose(f1, f0, atol=1e-10)


def test_eval_linear(rng, grid100):
    a = sh.ShCoeffTensor(3, rng.normal(size=(16, 4, 2)))
    b = sh.ShCoeffTensor(3, rng.normal(size=(16, 4, 2)))
    np.testing.assert_allclose(sh.sht_eval(a + b, grid100),
                               sh.sht_eval(a, grid100) + sh.sht_eval(b, grid100), atol=1e-12)
    zero = sh.ShCoeffTensor(3, np.zeros((16, 4, 2)))
    assert np.all(sh.sht_eval(zero, grid100) == 0)


def test_tensor_validation():
    with pytest.raises(DataError):
        sh.ShCoeffTensor(2, np.zeros((8, 3, 2)))
    with pytest.raises(DataError):
        sh.ShCoeffTensor(0, np.array([[[np.nan, 0.0]]]))


def test_channel_layout_round_trip(rng):
    t = sh.ShCoeffTensor(2, rng.normal(size=(9, 5, 2)))
    ch = t.to_channels()
    assert ch.shape == (18, 5)
    np.testing.assert_array_equal(ch[:9], t.coeffs[:, :, 0])
    np.testing.assert_array_equal(sh.ShCoeffTensor.from_channels(ch).coeffs, t.coeffs)


def test_coeff_container_round_trip(tmp_path, rng):
    t = sh.ShCoeffTensor(2, rng.normal(size=(9, 5, 2)).astype(np.float32).astype(float))
    sh.save_coeffs(t, tmp_path / "c.shc", np.arange(5.0))
    back = sh.load_coeffs(tmp_path / "c.shc")
    np.testing.assert_array_equal(back.coeffs, t.coeffs)
    (tmp_path / "bad.shc").write_bytes(b"\x02\x00\x00\x00{}")
    with pytest.raises(ContainerError):
        sh.load_coeffs(tmp_path / "bad.shc")


@given(order=st.integers(0, 4), seed=st.integers(0, 2**31))
def test_round_trip_property(order, seed):
    grid = sh.fibonacci_grid(64)
    c = np.random.default_rng(seed).normal(size=(sh.num_coeffs(order), 2, 2))
    vals = sh.sht_eval(sh.ShCoeffTensor(order, c), grid)
    back = sh.sht_eval(sh.sht_fit(vals, grid, order, 0.0), grid)
    np.testing.assert_allclose(back, vals, atol=1e-9 * max(1.0, np.abs(vals).max()))


def test_db_conversions():
    np.testing.assert_allclose(sh.to_db(np.array([1.0, 10.0, 0.1])), [0.0, 20.0, -20.0])
    assert sh.to_db(np.array([0.0]))[0] == pytest.approx(-240.0)
    np.testing.assert_allclose(sh.from_db(sh.to_db(np.array([0.3, 2.0]))), [0.3, 2.0])
