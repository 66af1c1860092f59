"""Taylor propagation through ``X = U Sigma U^T W`` (SVD-W) and ``X = P W`` (polar).

Both reduce every order to diagonal Sylvester equations in the basis of
``U_0``.  The divisions use Lorentzian broadening ``x / y -> x y / (y^2 + eps)``
so that repeated singular values give finite (zero) coupling instead of
0/0.  Sigma is stored as a vector; a rotation-variant expansion point may
carry negated singular values, which the formulas accept unchanged.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericalDomainError

BROADENING_EPS = 1e-12


def broadened_div(x, y, eps=BROADENING_EPS):
    return x * y / (y * y + eps)


def _tr(a):
    return np.swapaxes(a, -1, -2)


def _diag(a):
    return np.diagonal(a, axis1=-2, axis2=-1)


def sylvester_sum(sigma, a, eps=BROADENING_EPS):
    """Solve ``diag(s) M + M diag(s) = A`` elementwise with broadening."""
    return broadened_div(a, sigma[..., :, None] + sigma[..., None, :], eps)


# ---------------------------------------------------------------------------
# SVD-W

def _svdw_solve(u0, s0, w0, f, bu=None, g=None, eps=BROADENING_EPS):
    """Order-k outputs from ``F = U0^T E W0^T U0`` and the orthogonality terms."""
    rhs = f - _tr(f)
    if g is not None:
        rhs = rhs - g * s0[..., None, :]
    m = sylvester_sum(s0, rhs, eps)
    wk = u0 @ m @ _tr(u0) @ w0
    r = f - s0[..., :, None] * m
    if bu is not None:
        num = r + s0[..., :, None] * bu
        sk = _diag(r) + s0 * _diag(bu)
    else:
        num = r
        sk = _diag(r).copy()
    gap = s0[..., None, :] - s0[..., :, None]
    a = broadened_div(num, gap, eps)
    n = s0.shape[-1]
    idx = np.arange(n)
    a[..., idx, idx] = 0.0 if bu is None else -0.5 * _diag(bu)
    uk = u0 @ a
    return uk, sk, wk


def svdw_slope(u0, s0, w0, dx, eps=BROADENING_EPS):
    f = _tr(u0) @ dx @ _tr(w0) @ u0
    return _svdw_solve(u0, s0, w0, f, eps=eps)


def _reconstruction_tail(u, s, w, k):
    """Coefficient ``k`` of ``U S U^T W`` with every order-k factor set to zero."""
    t1 = np.zeros((k + 1,) + u.shape[1:])
    for j in range(k + 1):
        for i in range(max(0, j - k + 1), min(j, k - 1) + 1):
            t1[j] += u[i] * s[j - i][..., None, :]
    ut = _tr(u[:k])
    t2 = np.zeros_like(t1)
    for j in range(k + 1):
        for i in range(max(0, j - k + 1), j + 1):
            t2[j] += t1[i] @ ut[j - i]
    out = np.zeros(u.shape[1:])
    for i in range(1, k + 1):
        out += t2[i] @ w[k - i]
    return out


def svdw_bias(u, s, w, k, eps=BROADENING_EPS):
    """Bias of (U_k, Sigma_k, W_k) from orders ``< k`` of X's factors."""
    u0, s0, w0 = u[0], s[0], w[0]
    tail = _reconstruction_tail(u, s, w, k)
    f = -(_tr(u0) @ tail @ _tr(w0) @ u0)
    bu = sum(_tr(u[i]) @ u[k - i] for i in range(1, k)) if k > 1 else None
    if k > 1:
        bw = sum(_tr(w[i]) @ w[k - i] for i in range(1, k))
        g = _tr(u0) @ w0 @ bw @ _tr(w0) @ u0
    else:
        g = None
    if bu is None:
        bu = np.zeros_like(u0)
    return _svdw_solve(u0, s0, w0, f, bu, g, eps)


def prop_svdw(x, u, s, w, k, eps=BROADENING_EPS):
    """Order-k SVD-W coefficients given ``X_0..X_k`` and factor orders ``< k``."""
    lu, ls, lw = svdw_slope(u[0], s[0], w[0], x[k], eps)
    bu, bs, bw = svdw_bias(u, s, w, k, eps)
    return lu + bu, ls + bs, lw + bw


def series_svdw(x, rotation_variant=False, eps=BROADENING_EPS):
    """Full (U, Sigma, W) series for a batched matrix series ``x``."""
    from .tensor import batched_svd_w

    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    trip = batched_svd_w(x[0], rotation_variant)
    u = np.zeros(x.shape)
    w = np.zeros(x.shape)
    s = np.zeros(x.shape[:-1])
    u[0], s[0], w[0] = trip.U, trip.sigma, trip.W
    for k in range(1, n):
        u[k], s[k], w[k] = prop_svdw(x, u, s, w, k, eps)
    return u, s, w


# ---------------------------------------------------------------------------
# polar decomposition X = P W

def _check_invertible(s0):
    small = np.abs(s0) <= 1e-14 * np.maximum(np.abs(s0).max(axis=-1, keepdims=True), 1e-300)
    if np.any(small):
        flat = small.reshape(-1, small.shape[-1]).any(axis=-1)
        raise NumericalDomainError("polar decomposition of a singular matrix",
                                   batch_index=int(np.argmax(flat)))


def _sym_solve(u0, s0, rhs, eps):
    return u0 @ sylvester_sum(s0, _tr(u0) @ rhs @ u0, eps) @ _tr(u0)


def _p0_inv(u0, s0):
    return (u0 / s0[..., None, :]) @ _tr(u0)


def polar_slope(u0, s0, w0, x0, dx, eps=BROADENING_EPS):
    """Linear part of (P_k, W_k) in ``X_k``."""
    rhs = x0 @ _tr(dx) + dx @ _tr(x0)
    pk = _sym_solve(u0, s0, rhs, eps)
    wk = _p0_inv(u0, s0) @ (dx - pk @ w0)
    return pk, wk


def polar_bias(u0, s0, x, p, w, k, eps=BROADENING_EPS):
    """Constant part of (P_k, W_k) from orders ``< k`` of X, P and W."""
    if k < 2:
        z = np.zeros(x.shape[1:])
        return z, z.copy()
    bp = (np.matmul(p[1:k], p[k - 1:0:-1]) - np.matmul(x[1:k], _tr(x[k - 1:0:-1]))).sum(axis=0)
    pk = _sym_solve(u0, s0, -bp, eps)
    tail = np.matmul(p[1:k], w[k - 1:0:-1]).sum(axis=0)
    wk = _p0_inv(u0, s0) @ (-(pk @ w[0]) - tail)
    return pk, wk


def prop_polar(x, p, w, k, u0, s0, eps=BROADENING_EPS):
    """Order-k (P_k, W_k) given ``X_0..X_k``, lower orders of P and W, and ``P_0``'s eigenbasis."""
    lp, lw = polar_slope(u0, s0, w[0], x[0], x[k], eps)
    bp, bw = polar_bias(u0, s0, x, p, w, k, eps)
    return lp + bp, lw + bw


def series_polar(x, rotation_variant=False, eps=BROADENING_EPS):
    """Full (P, W) series with ``P`` symmetric and ``W`` orthogonal order by order."""
    from .tensor import batched_svd_w

    x = np.asarray(x, dtype=np.float64)
    trip = batched_svd_w(x[0], rotation_variant)
    _check_invertible(trip.sigma)
    u0, s0 = trip.U, trip.sigma
    p = np.zeros(x.shape)
    w = np.zeros(x.shape)
    p[0] = (u0 * s0[..., None, :]) @ _tr(u0)
    w[0] = trip.W
    for k in range(1, x.shape[0]):
        p[k], w[k] = prop_polar(x, p, w, k, u0, s0, eps)
    return p, w
