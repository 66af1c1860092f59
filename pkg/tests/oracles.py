"""Independent truncated-polynomial arithmetic used as a reference.

A series is an array whose axis 0 is the power of ``a``.  Nothing here
calls into the package; the formulas are the textbook power-series
compositions, evaluated by plain polynomial products.
"""
import itertools

import numpy as np


def pmul(a, b, n=None):
    """Truncated Cauchy product of two elementwise series."""
    n = n or a.shape[0]
    out = np.zeros((n,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
    for i in range(min(n, a.shape[0])):
        for j in range(min(n - i, b.shape[0])):
            out[i + j] = out[i + j] + a[i] * b[j]
    return out


def pmatmul(a, b, n=None):
    n = n or a.shape[0]
    out = np.zeros((n,) + (a @ b[:1]).shape[1:])
    for i in range(min(n, a.shape[0])):
        for j in range(min(n - i, b.shape[0])):
            out[i + j] += a[i] @ b[j]
    return out


def _powers(h, count, mult):
    """``[h^0, h^1, ..., h^(count-1)]`` with ``h^0`` the unit series."""
    n = h.shape[0]
    unit = np.zeros_like(h)
    if mult is pmatmul:
        unit[0] = np.broadcast_to(np.eye(h.shape[-1]), h.shape[1:])
    else:
        unit[0] = 1.0
    out = [unit]
    for _ in range(1, count):
        out.append(mult(out[-1], h, n))
    return out


def binom(r, j):
    """Generalized binomial coefficient (valid for any real ``r``)."""
    out = 1.0
    for i in range(j):
        out *= (r - i) / (i + 1)
    return out


def plog(x):
    """``log(x0 + h) = log x0 + sum_j (-1)^(j+1) (h/x0)^j / j``."""
    h = x.copy()
    h[0] = 0.0
    h = h / x[0]
    out = np.zeros_like(x)
    out[0] = np.log(x[0])
    for j, hj in enumerate(_powers(h, x.shape[0], pmul)[1:], 1):
        out += (-1) ** (j + 1) * hj / j
    return out


def ppow(x, r):
    """``(x0 + h)^r = x0^r sum_j binom(r, j) (h/x0)^j`` (general binomial series)."""
    h = x.copy()
    h[0] = 0.0
    h = h / x[0]
    acc = np.zeros_like(x)
    for j, hj in enumerate(_powers(h, x.shape[0], pmul)):
        acc += binom(r, j) * hj
    return np.power(x[0], r) * acc


def pinv(x):
    """Reciprocal series ``1/x``."""
    return ppow(x, -1.0)


def pmatinv(x):
    """``(X0 + H)^-1 = sum_j (-X0^-1 H)^j X0^-1``."""
    x0inv = np.linalg.inv(x[0])
    h = x.copy()
    h[0] = 0.0
    m = -(x0inv @ h)
    acc = np.zeros_like(x)
    for mj in _powers(m, x.shape[0], pmatmul):
        acc += mj
    return pmatmul(acc, x0inv[None])


def pdet(x):
    """Leibniz expansion with series products, truncated to ``x``'s length."""
    m = x.shape[-1]
    out = np.zeros(x.shape[:-2])
    for perm in itertools.permutations(range(m)):
        inversions = sum(perm[i] > perm[j] for i in range(m) for j in range(i + 1, m))
        term = x[..., 0, perm[0]]
        for row in range(1, m):
            term = pmul(term, x[..., row, perm[row]])
        out += (-1) ** inversions * term
    return out


def rel_err(got, want, floor=1e-300):
    """Max abs error over the max magnitude of ``want`` (at least ``floor``)."""
    got, want = np.asarray(got), np.asarray(want)
    return float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), floor))
