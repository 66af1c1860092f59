"""Taylor coefficient propagation rules for individual operators.

Every rule is split the same way.  The order-k coefficient of an operator
output is affine in the order-k coefficients of its inputs::

    f_k = slope(x_k) + bias(x_0..x_{k-1}, f_0..f_{k-1})

``*_bias`` functions compute the second term; the slope is the operator's
Jacobian at the expansion point and is shared with reverse-mode
differentiation.  ``prop_*`` functions return the full order-k coefficient
(slope plus bias) and ``series_*`` functions return every coefficient of a
truncated input series, which is what the tests compare against the
independent polynomial oracles.

Coefficient stacks are arrays whose axis 0 is the power of the path
parameter, followed by the batch axis and the item axes.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import NumericalDomainError

# Integer exponents use repeated squaring when the base gets this close to zero.
POW_SMALL_BASE = 1e-3


def _stack(x):
    return np.asarray(x, dtype=np.float64)


def _cauchy_tail(x, y, k, op=np.multiply):
    """``sum_{i=1}^{k-1} op(x_i, y_{k-i})`` or ``None`` when empty."""
    if k < 2:
        return None
    return op(x[1:k], y[k - 1:0:-1]).sum(axis=0)


def _plus(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _or_zero(v, like):
    return np.zeros(np.shape(like)) if v is None else v


# ---------------------------------------------------------------------------
# arithmetic

def prop_add(x, y, k):
    x, y = _stack(x), _stack(y)
    return x[k] + y[k]


def prop_sub(x, y, k):
    x, y = _stack(x), _stack(y)
    return x[k] - y[k]


def mul_bias(x, y, k):
    return _cauchy_tail(x, y, k)


def prop_mul(x, y, k):
    x, y = _stack(x), _stack(y)
    out = y[0] * x[k] + x[0] * y[k]
    return _plus(out, mul_bias(x, y, k))


def div_bias(f, y, k):
    """Bias of ``f = x / y`` given ``f_0..f_{k-1}`` and ``y``."""
    s = _cauchy_tail(f, y, k)
    return None if s is None else -s / y[0]


def div_slope(f0, y0, dx, dy):
    return (dx - f0 * dy) / y0


def series_div(x, y):
    x, y = _stack(x), _stack(y)
    if np.any(y[0] == 0):
        raise NumericalDomainError("division by series with zero constant term")
    f = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    f[0] = x[0] / y[0]
    for k in range(1, f.shape[0]):
        f[k] = _plus(div_slope(f[0], y[0], x[k], y[k]), div_bias(f, y, k))
    return f


def prop_div(x, y, k):
    x, y = _stack(x), _stack(y)
    return series_div(x[:k + 1], y[:k + 1])[k]


# ---------------------------------------------------------------------------
# elementwise analytic functions

def log_bias(x, f, k):
    if k < 2:
        return None
    w = (np.arange(1, k) / k).reshape((-1,) + (1,) * (x.ndim - 1))
    return -(w * x[k - 1:0:-1] * f[1:k]).sum(axis=0) / x[0]


def series_log(x):
    x = _stack(x)
    f = np.zeros(x.shape)
    f[0] = T.log(x[0])
    for k in range(1, x.shape[0]):
        f[k] = _plus(x[k] / x[0], log_bias(x, f, k))
    return f


def prop_log(x, k):
    return series_log(_stack(x)[:k + 1])[k]


def pow_uses_integer_path(x0, r) -> bool:
    r = float(r)
    return r.is_integer() and r >= 0 and np.min(np.abs(x0)) < POW_SMALL_BASE


def pow_slope_factor(x0, r):
    """Derivative ``r x0^(r-1)``, well defined at zero for integer ``r >= 1``."""
    r = float(r)
    if r == 0:
        return np.zeros(np.shape(x0))
    if r == 1:
        return np.ones(np.shape(x0))
    return r * T.pow_const(np.asarray(x0, dtype=np.float64), r - 1)


def pow_bias(x, f, r, k):
    """Recurrence bias of ``f = x^r``; needs ``x_0`` away from zero."""
    if k < 2:
        return None
    i = np.arange(1, k)
    w = ((i / k) * (r + 1) - 1).reshape((-1,) + (1,) * (x.ndim - 1))
    return (w * f[k - 1:0:-1] * x[1:k]).sum(axis=0) / x[0]


def _truncated_product(a, b, n):
    out = np.zeros((n,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
    for i in range(min(n, a.shape[0])):
        m = min(n - i, b.shape[0])
        if m > 0:
            out[i:i + m] += a[i] * b[:m]
    return out


def poly_pow_int(x, r: int, n: int):
    """First ``n`` coefficients of ``x(a)^r`` by repeated squaring."""
    result = np.zeros((n,) + x.shape[1:])
    result[0] = 1.0
    base = x[:n]
    while r:
        if r & 1:
            result = _truncated_product(result, base, n)
        r >>= 1
        if r:
            base = _truncated_product(base, base, n)
    return result


def pow_int_bias(x, r, k):
    """Coefficient ``k`` of ``(x_0 + ... + x_{k-1} a^{k-1})^r``."""
    return poly_pow_int(x[:k], int(r), k + 1)[k]


def series_pow(x, r):
    x = _stack(x)
    r = float(r)
    n = x.shape[0]
    if pow_uses_integer_path(x[0], r):
        return poly_pow_int(x, int(r), n)
    if np.any(x[0] == 0):
        raise NumericalDomainError("power series of a base with zero constant term")
    f = np.zeros(x.shape)
    f[0] = T.pow_const(x[0], r)
    for k in range(1, n):
        f[k] = _plus(r * f[0] * x[k] / x[0], pow_bias(x, f, r, k))
    return f


def prop_pow(x, r, k):
    return series_pow(_stack(x)[:k + 1], r)[k]


# ---------------------------------------------------------------------------
# matrix product, inverse, determinant

def matmul_bias(x, y, k):
    return _cauchy_tail(x, y, k, np.matmul)


def prop_matmul(x, y, k):
    x, y = _stack(x), _stack(y)
    return _plus(x[k] @ y[0] + x[0] @ y[k], matmul_bias(x, y, k))


def matinv_bias(f, x, x0inv, k):
    s = _cauchy_tail(f, x, k, np.matmul)
    return None if s is None else -(s @ x0inv)


def matinv_slope(x0inv, dx):
    return -(x0inv @ dx @ x0inv)


def series_matinv(x):
    x = _stack(x)
    f = np.zeros(x.shape)
    f[0] = T.batched_inverse(x[0]) if x.ndim == 4 else np.linalg.inv(x[0])
    for k in range(1, x.shape[0]):
        f[k] = _plus(matinv_slope(f[0], x[k]), matinv_bias(f, x, f[0], k))
    return f


def prop_matinv(x, k):
    return series_matinv(_stack(x)[:k + 1])[k]


def det_slope(x0):
    """Cofactor matrix ``C`` with ``d det = <C, dX>``, computed through an SVD.

    ``C = det(U) det(V) U D V^T`` with ``D_ii = prod_{j != i} sigma_j``; no
    singular value is ever divided, so singular inputs are fine.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    u, s, vt = np.linalg.svd(x0)
    m = s.shape[-1]
    d = np.empty_like(s)
    for i in range(m):
        d[..., i] = np.prod(np.delete(s, i, axis=-1), axis=-1)
    sign = np.linalg.det(u) * np.linalg.det(vt)
    return sign[..., None, None] * ((u * d[..., None, :]) @ vt)


def _next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def det_bias_fft(x, k):
    """Coefficient ``k`` of ``det(sum_{i<k} X_i a^i)`` by evaluation at roots of unity.

    The number of sample points covers the full degree ``m (k-1)`` of the
    truncated determinant so that the inverse transform cannot alias higher
    coefficients onto index ``k``.
    """
    x = _stack(x)
    m = x.shape[-1]
    degree = m * (k - 1)
    K = _next_pow2(max(k + 1, degree - k + 1))
    pad = np.zeros((K,) + x.shape[1:])
    pad[:k] = x[:k]
    y = T.dft_batch(pad, "forward")
    d = np.linalg.det(y)
    return T.dft_batch(d, "inverse")[k].real


def _det_poly_leibniz(x):
    """Full coefficient series of ``det(X(a))`` from the Leibniz expansion."""
    from itertools import permutations

    n, m = x.shape[0], x.shape[-1]
    out = np.zeros((m * (n - 1) + 1,) + x.shape[1:-2])
    for perm in permutations(range(m)):
        sign = np.linalg.det(np.eye(m)[list(perm)])
        prod = np.zeros((1,) + x.shape[1:-2])
        prod[0] = 1.0
        for row, col in enumerate(perm):
            factor = x[..., row, col]
            new = np.zeros((prod.shape[0] + n - 1,) + prod.shape[1:])
            for i in range(prod.shape[0]):
                new[i:i + n] += prod[i] * factor
            prod = new
        out += sign * prod
    return out


def det_bias_leibniz(x, k):
    x = _stack(x)
    if k < 1:
        raise ValueError("bias is defined for k >= 1")
    poly = _det_poly_leibniz(x[:k])
    return poly[k] if k < poly.shape[0] else np.zeros(poly.shape[1:])


class IncrementalDet:
    """Order-by-order determinant bias for 1x1, 2x2 and 3x3 items.

    For 3x3 the determinant is ``c0 . (c1 x c2)`` over columns; the cross
    product series is cached so each order costs O(k) instead of O(k^2).
    Call :meth:`bias` for order ``k`` and then :meth:`commit` once ``X_k``
    is known.
    """

    def __init__(self, x0):
        x0 = np.asarray(x0, dtype=np.float64)
        self.m = x0.shape[-1]
        if self.m > 3:
            raise ValueError("IncrementalDet handles m <= 3")
        self.cols = [x0]
        if self.m == 3:
            self.cross = [np.cross(x0[..., :, 1], x0[..., :, 2])]

    def _col(self, j):
        return np.stack([c[..., :, j] for c in self.cols])

    def bias(self, k):
        if k != len(self.cols):
            raise ValueError(f"expected order {len(self.cols)}, got {k}")
        if self.m == 1 or k < 2 and self.m == 2:
            return np.zeros(self.cols[0].shape[:-2])
        x = np.stack(self.cols)
        if self.m == 2:
            return (_cauchy_tail(x[..., 0, 0], x[..., 1, 1], k)
                    - _cauchy_tail(x[..., 0, 1], x[..., 1, 0], k))
        c1, c2 = x[..., :, 1], x[..., :, 2]
        trunc = _cauchy_tail(c1, c2, k, np.cross)
        c0 = x[..., :, 0]
        cross = np.stack(self.cross)
        q = np.einsum("k...i,k...i->...", c0[1:k], cross[k - 1:0:-1]) if k > 1 else 0.0
        if trunc is not None:
            q = q + np.einsum("...i,...i->...", c0[0], trunc)
            self._trunc = trunc
        else:
            self._trunc = np.zeros_like(c0[0])
        return np.asarray(q) + np.zeros(self.cols[0].shape[:-2])

    def commit(self, xk):
        xk = np.asarray(xk, dtype=np.float64)
        k = len(self.cols)
        if self.m == 3:
            x0 = self.cols[0]
            if k == 1:
                self._trunc = np.zeros_like(x0[..., :, 0])
            full = (self._trunc + np.cross(x0[..., :, 1], xk[..., :, 2])
                    + np.cross(xk[..., :, 1], x0[..., :, 2]))
            self.cross.append(full)
        self.cols.append(np.broadcast_to(xk, self.cols[0].shape))


def det_bias(x, k):
    """Determinant bias: cofactor-expansion for ``m <= 3``, roots of unity otherwise."""
    x = _stack(x)
    if x.shape[-1] > 3:
        return det_bias_fft(x, k)
    inc = IncrementalDet(x[0])
    for i in range(1, k):
        inc.bias(i)
        inc.commit(x[i])
    return inc.bias(k)


def series_det(x):
    x = _stack(x)
    g = np.zeros(x.shape[:-2])
    g[0] = np.linalg.det(x[0])
    c = det_slope(x[0])
    for k in range(1, x.shape[0]):
        g[k] = (c * x[k]).sum(axis=(-1, -2)) + det_bias(x, k)
    return g
