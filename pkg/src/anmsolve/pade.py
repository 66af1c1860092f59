"""Vector Padé approximants sharing one scalar denominator.

Given coefficients ``u_0..u_N`` of a vector series, the approximant is::

    P_N(a) = u_0 + sum_{i=1}^{N-1} D_{N-1-i}(a) / D_{N-1}(a) * u_i a^i

where ``D_k`` is ``D_{N-1}`` truncated to degree ``k`` and ``d_0 = 1``.
Equivalently the numerator is ``D(a) (u(a) - u_0)`` truncated at degree
``N - 1``, so the rational form reproduces ``u_1..u_{N-1}`` for any
denominator.  The denominator coefficients cancel the degree-N term in the
least-squares sense: ``u_N + sum_j d_j u_{N-j}`` is made orthogonal to the
span of ``u_1..u_{N-1}``.  Columns that are numerically dependent on the
ones already taken are dropped (their ``d_j`` is zero), which lowers the
denominator degree instead of producing a singular system.
"""
from __future__ import annotations

import numpy as np

# columns whose Gram-Schmidt remainder falls below this fraction are dependent
DEPENDENCE_TOL = 1e-10
NO_ROOT_CAP = 100.0


class PadeApproximant:
    """Rational approximant built from a coefficient array ``u`` of shape (N+1, n)."""

    def __init__(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.ndim == 1:
            u = u[:, None]
        n_order = u.shape[0] - 1
        if n_order < 2:
            raise ValueError("Padé construction needs at least order 2")
        self.order = n_order
        self.u0 = u[0].copy()
        self.d, self.dropped = _denominator(u)
        # numerator coefficients c_m = sum_{j<m} d_j u_{m-j}, m = 1..N-1
        num = np.zeros((n_order, u.shape[1]))
        for m in range(1, n_order):
            num[m] = sum(self.d[j] * u[m - j] for j in range(m))
        self.num = num

    @property
    def degenerate(self):
        """True when every denominator column was dependent (Padé equals Taylor)."""
        return self.dropped == self.order - 1

    def denominator(self, a):
        return np.polynomial.polynomial.polyval(a, self.d)

    def __call__(self, a):
        a = float(a)
        top = np.polynomial.polynomial.polyval(a, self.num)
        return self.u0 + top / self.denominator(a)

    def smallest_positive_root(self):
        d = np.trim_zeros(self.d, "b")
        if d.size < 2:
            return None
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            # a negligible leading coefficient sends roots to infinity; those are no poles
            roots = np.roots(d[::-1])
        roots = roots[np.isfinite(roots)]
        real = roots[np.abs(roots.imag) <= 1e-10 * np.maximum(1.0, np.abs(roots))].real
        real = real[real > 0]
        return float(real.min()) if real.size else None

    def taylor_coefficients(self, count):
        """Re-expand the rational form around zero, returning ``count`` coefficients."""
        n = self.u0.shape[0]
        m = min(count, self.num.shape[0])
        # D * (P - u0) = num, so the series of P - u0 follows by long division (d_0 = 1)
        w = np.zeros((count, n))
        w[:m] = self.num[:m]
        for k in range(1, count):
            for j in range(1, min(k, len(self.d) - 1) + 1):
                w[k] -= self.d[j] * w[k - j]
        out = w
        out[0] = self.u0
        return out


def _denominator(u):
    """Denominator coefficients ``d_0..d_{N-1}`` and the number of dropped columns."""
    n_order = u.shape[0] - 1
    cols = [u[n_order - j] for j in range(1, n_order)]   # column j-1 multiplies d_j
    basis, kept = [], []
    for j, c in enumerate(cols):
        r = c.copy()
        for q in basis:
            r -= (q @ r) * q
        nr = np.linalg.norm(r)
        if nr > DEPENDENCE_TOL * max(np.linalg.norm(c), 1e-300) and nr > 0:
            basis.append(r / nr)
            kept.append(j)
    d = np.zeros(n_order)
    d[0] = 1.0
    if kept:
        A = np.stack([cols[j] for j in kept], axis=1)
        sol, *_ = np.linalg.lstsq(A, -u[n_order], rcond=None)
        d[np.array(kept) + 1] = sol
    return d, n_order - 1 - len(kept)


def pade_construct(u) -> PadeApproximant:
    return PadeApproximant(u)


def _relative_gap(pn, pm, a):
    top = np.linalg.norm(pn(a) - pm(a))
    bottom = np.linalg.norm(pn(a) - pn.u0)
    if bottom == 0:
        return np.inf
    return top / bottom


def rov_pade(u, a_r: float, eps_rov: float, pade: PadeApproximant | None = None,
             iters: int = 60) -> float:
    """Largest ``a`` in ``(a_r, r)`` where Padé of orders N and N-1 agree within ``eps_rov``.

    ``r`` is the smallest positive root of the denominator or ``100 a_r``
    when there is none.  Returns ``a_r`` when the criterion already fails
    there.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    pn = pade if pade is not None else PadeApproximant(u)
    pm = PadeApproximant(u[:-1])
    root = pn.smallest_positive_root()
    cap = NO_ROOT_CAP * a_r
    hi = cap if root is None else min(root, cap)
    if hi <= a_r:
        return a_r

    def ok(a):
        e = _relative_gap(pn, pm, a)
        return np.isfinite(e) and e < eps_rov

    if not ok(a_r):
        return a_r
    upper = hi * (1 - 1e-9) if root is not None and root <= cap else hi
    if ok(upper):
        return upper
    lo = a_r
    for _ in range(iters):
        mid = 0.5 * (lo + upper)
        if ok(mid):
            lo = mid
        else:
            upper = mid
        if upper - lo <= 1e-12 * upper:
            break
    return lo
