import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from anmsolve import taylor_svd as TS
from anmsolve.errors import NumericalDomainError

from oracles import pmatmul, rel_err


def _t(a):
    return np.swapaxes(a, -1, -2)


def svdw_reconstruction(u, s, w):
    sig = np.zeros(u.shape)
    idx = np.arange(u.shape[-1])
    sig[..., idx, idx] = s
    return pmatmul(pmatmul(pmatmul(u, sig), _t(u)), w)


def random_series(seed, order=6, batch=8, spread=True):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(order + 1, batch, 3, 3)) * 0.2
    if spread:
        # well separated singular values (3, 2, 1) under a random rotation pair
        R1 = Rotation.random(batch, random_state=seed).as_matrix()
        R2 = Rotation.random(batch, random_state=seed + 1).as_matrix()
        x[0] = R1 @ np.diag([3.0, 2.0, 1.0]) @ R2
    return x


def orthogonality_residual(q, k):
    return np.abs(sum(_t(q[i]) @ q[k - i] for i in range(k + 1))).max()


def test_sylvester_sum_solves_the_equation():
    rng = np.random.default_rng(0)
    sigma = np.array([[3.0, 2.0, 0.5]])
    a = rng.normal(size=(1, 3, 3))
    m = TS.sylvester_sum(sigma, a)
    lhs = sigma[..., :, None] * m + m * sigma[..., None, :]
    assert np.abs(lhs - a).max() <= 1e-10 * np.abs(a).max()


def test_broadening_keeps_zero_over_zero_finite():
    assert TS.broadened_div(0.0, 0.0) == 0.0
    assert TS.broadened_div(1.0, 2.0) == pytest.approx(0.5)


def test_svdw_series_reconstructs_random_input():
    x = random_series(1)
    u, s, w = TS.series_svdw(x)
    assert rel_err(svdw_reconstruction(u, s, w), x) <= 1e-8
    for k in range(1, x.shape[0]):
        assert orthogonality_residual(u, k) <= 1e-10
        assert orthogonality_residual(w, k) <= 1e-10


def test_svdw_constant_input_has_no_higher_orders():
    x = np.zeros((4, 2, 3, 3))
    x[0] = random_series(2, 0, 2)[0]
    u, s, w = TS.series_svdw(x)
    for arr in (u, s, w):
        np.testing.assert_allclose(arr[1:], 0, atol=1e-14)


def test_isotropic_series_stays_finite():
    x = np.zeros((6, 1, 3, 3))
    x[0] = x[1] = np.eye(3)
    u, s, w = TS.series_svdw(x)
    assert all(np.all(np.isfinite(a)) for a in (u, s, w))
    np.testing.assert_allclose(s[0], 1.0, atol=1e-14)
    np.testing.assert_allclose(s[1], 1.0, atol=1e-12)
    np.testing.assert_allclose(w[1:], 0, atol=1e-12)
    assert rel_err(svdw_reconstruction(u, s, w), x) <= 1e-6
    p, wp = TS.series_polar(x)
    assert np.all(np.isfinite(p)) and np.all(np.isfinite(wp))
    assert rel_err(pmatmul(p, wp), x) <= 1e-6


def test_polar_of_scaled_rotation():
    R = Rotation.from_rotvec([0.4, 0.1, -0.7]).as_matrix()
    x = np.zeros((5, 1, 3, 3))
    x[0] = x[1] = R
    p, w = TS.series_polar(x, rotation_variant=True)
    np.testing.assert_allclose(p[0, 0], np.eye(3), atol=1e-12)
    np.testing.assert_allclose(p[1, 0], np.eye(3), atol=1e-12)
    np.testing.assert_allclose(p[2:], 0, atol=1e-12)
    np.testing.assert_allclose(w[0, 0], R, atol=1e-12)
    np.testing.assert_allclose(w[1:], 0, atol=1e-12)


def test_polar_of_spd_constant():
    a = np.random.default_rng(3).normal(size=(3, 3))
    spd = a @ a.T + 3 * np.eye(3)
    x = np.zeros((4, 1, 3, 3))
    x[0] = spd
    p, w = TS.series_polar(x)
    np.testing.assert_allclose(p[0, 0], spd, atol=1e-12)
    np.testing.assert_allclose(w[0, 0], np.eye(3), atol=1e-12)
    np.testing.assert_allclose(p[1:], 0, atol=1e-12)
    np.testing.assert_allclose(w[1:], 0, atol=1e-12)


def test_polar_series_symmetric_and_reconstructs():
    x = random_series(4, order=8)
    p, w = TS.series_polar(x, rotation_variant=True)
    np.testing.assert_allclose(p, _t(p), atol=1e-12)
    assert rel_err(pmatmul(p, w), x) <= 1e-8
    for k in range(1, x.shape[0]):
        assert orthogonality_residual(w, k) <= 1e-10


def test_polar_and_svdw_agree_on_w():
    x = random_series(5)
    _, _, w_svd = TS.series_svdw(x, rotation_variant=True)
    _, w_pol = TS.series_polar(x, rotation_variant=True)
    assert rel_err(w_pol, w_svd) <= 1e-8


def test_polar_rejects_singular_input():
    x = np.zeros((3, 1, 3, 3))
    x[0] = np.diag([1.0, 1.0, 0.0])
    with pytest.raises(NumericalDomainError):
        TS.series_polar(x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 2), st.integers(2, 8))
def test_polar_reconstruction_property(seed, order):
    x = random_series(seed, order=order, batch=3)
    p, w = TS.series_polar(x, rotation_variant=True)
    assert rel_err(pmatmul(p, w), x) <= 1e-8
