"""Batched dense tensors and the numerical primitives built on them.

A batched tensor is a float64 ``numpy.ndarray`` whose leading axis indexes
independent batch items (one item per tetrahedron in the FEM layer).  All
primitives here are pure: they never write into their arguments, so arrays
can be shared freely between graph vertices and threads.

All-zero tensors get a dedicated representation: :func:`zeros` returns a
read-only broadcast view of a single process-wide scalar buffer.  Checking
for it is an identity test on the view's base (:func:`is_zero`), which lets
the arithmetic helpers short-circuit ``x + 0`` and ``x * 0`` without touching
the data.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from .errors import NumericalDomainError

_ZERO_BUFFER = np.zeros(())
_ZERO_BUFFER.setflags(write=False)

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Set the number of workers used to split batched linear algebra."""
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def zeros(shape) -> np.ndarray:
    """Shared read-only zero tensor of the given shape (no allocation)."""
    return np.broadcast_to(_ZERO_BUFFER, tuple(shape))


def is_zero(x) -> bool:
    return isinstance(x, np.ndarray) and x.base is _ZERO_BUFFER


def asbatch(x) -> np.ndarray:
    """Return a float64 view or copy of ``x`` suitable as a batched tensor."""
    if is_zero(x):
        return x
    return np.asarray(x, dtype=np.float64)


def _map_batch(fn, *arrays):
    """Apply ``fn`` to batch chunks, in parallel when threads are enabled.

    Results are concatenated along the batch axis; chunking never changes
    values because every primitive acts on items independently.
    """
    n = arrays[0].shape[0]
    if _num_threads == 1 or n < 2 * _num_threads:
        return fn(*arrays)
    bounds = np.linspace(0, n, _num_threads + 1).astype(int)
    chunks = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(_num_threads) as pool:
        parts = list(pool.map(lambda c: fn(*c), chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# elementwise maps

def _item_size(shape) -> int:
    return math.prod(shape[1:])


def check_broadcast(sa, sb):
    """Result shape of a batched elementwise op, or ``ValueError``.

    Equal shapes combine directly; a tensor with one element per batch item
    (e.g. ``n x 1 x 1``) broadcasts against any item shape.  Nothing more
    general is accepted so that Jacobian sparsity stays per-item.
    """
    sa, sb = tuple(sa), tuple(sb)
    if sa == sb:
        return sa
    if sa[:1] != sb[:1]:
        raise ValueError(f"batch sizes differ: {sa} vs {sb}")
    if _item_size(sa) == 1 and len(sa) <= len(sb):
        return sb
    if _item_size(sb) == 1 and len(sb) <= len(sa):
        return sa
    raise ValueError(f"incompatible shapes {sa} and {sb}")


def _bshape(x, ndim):
    # pad per-item singleton axes so numpy broadcasting lines up with the batch axis
    return x.reshape(x.shape + (1,) * (ndim - x.ndim)) if x.ndim < ndim else x


def add(x, y):
    shape = check_broadcast(x.shape, y.shape)
    if is_zero(y) and x.shape == shape:
        return x
    if is_zero(x) and y.shape == shape:
        return y
    if is_zero(x) and is_zero(y):
        return zeros(shape)
    return _bshape(x, len(shape)) + _bshape(y, len(shape))


def sub(x, y):
    shape = check_broadcast(x.shape, y.shape)
    if is_zero(y) and x.shape == shape:
        return x
    if is_zero(x) and is_zero(y):
        return zeros(shape)
    return _bshape(x, len(shape)) - _bshape(y, len(shape))


def mul(x, y):
    shape = check_broadcast(x.shape, y.shape)
    if is_zero(x) or is_zero(y):
        return zeros(shape)
    return _bshape(x, len(shape)) * _bshape(y, len(shape))


def _first_bad(mask):
    mask = np.atleast_1d(mask)
    flat = mask.reshape(mask.shape[0], -1).any(axis=1)
    return int(np.argmax(flat))


def div(x, y):
    shape = check_broadcast(x.shape, y.shape)
    if is_zero(y) or np.any(y == 0):
        bad = 0 if is_zero(y) else _first_bad(y == 0)
        raise NumericalDomainError("division by zero", batch_index=bad)
    if is_zero(x):
        return zeros(shape)
    return _bshape(x, len(shape)) / _bshape(y, len(shape))


def log(x):
    if is_zero(x) or np.any(x <= 0):
        bad = 0 if is_zero(x) else _first_bad(x <= 0)
        raise NumericalDomainError("log of non-positive value", batch_index=bad)
    return np.log(x)


def pow_const(x, r: float):
    r = float(r)
    if r == 0.0:
        return np.ones(x.shape)
    if is_zero(x):
        if r < 0:
            raise NumericalDomainError("negative power of zero", batch_index=0)
        return zeros(x.shape)
    if not r.is_integer() and np.any(x < 0):
        raise NumericalDomainError("non-integer power of negative value",
                                   batch_index=_first_bad(x < 0))
    if r < 0 and np.any(x == 0):
        raise NumericalDomainError("negative power of zero", batch_index=_first_bad(x == 0))
    return np.power(x, r)


_EW_OPS = {"add": add, "sub": sub, "mul": mul, "div": div, "log": log, "pow_const": pow_const}


def ew_map(name: str, x, y=None):
    """Dispatch an elementwise map by name (``pow_const`` takes the exponent as ``y``)."""
    try:
        fn = _EW_OPS[name]
    except KeyError:
        raise ValueError(f"unknown elementwise op {name!r}") from None
    if name == "log":
        return fn(x)
    return fn(x, y)


# ---------------------------------------------------------------------------
# batched linear algebra

def batched_matmul(a, b):
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError("batched_matmul expects n x p x q tensors")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    shape = (a.shape[0], a.shape[1], b.shape[2])
    if is_zero(a) or is_zero(b):
        return zeros(shape)
    return np.matmul(a, b)


def batched_det(x):
    if is_zero(x):
        return zeros(x.shape[:1])
    return _map_batch(np.linalg.det, x)


def _singular_items(x, det):
    scale = np.linalg.norm(x.reshape(x.shape[0], -1), axis=1) ** x.shape[-1]
    return np.abs(det) <= 1e-14 * np.maximum(scale, np.finfo(float).tiny)


def batched_inverse(x):
    det = batched_det(x)
    bad = _singular_items(x, det) if not is_zero(x) else np.ones(x.shape[0], bool)
    if np.any(bad):
        raise NumericalDomainError("singular matrix", batch_index=int(np.argmax(bad)))
    return _map_batch(np.linalg.inv, x)


class SvdWTriple(NamedTuple):
    """``X = U diag(sigma) U^T W`` with ``W = U V^T``."""

    U: np.ndarray
    sigma: np.ndarray
    W: np.ndarray


def _fix_reflection(u, s, vt, rel_tol):
    """Make ``det(U V^T) = +1`` for one item by flipping an odd-size group.

    Groups are runs of singular values equal within ``rel_tol``; the odd
    group holding the smallest values is negated together with its right
    singular vectors, which keeps ``U diag(s) V^T`` unchanged.
    """
    m = s.shape[0]
    scale = max(abs(s[0]), np.finfo(float).tiny)
    groups, start = [], 0
    for i in range(1, m + 1):
        if i == m or abs(s[i - 1] - s[i]) > rel_tol * scale:
            groups.append((start, i))
            start = i
    odd = [g for g in groups if (g[1] - g[0]) % 2 == 1]
    lo, hi = odd[-1] if odd else (m - 1, m)
    s = s.copy()
    vt = vt.copy()
    s[lo:hi] = -s[lo:hi]
    vt[lo:hi] = -vt[lo:hi]
    order = np.argsort(-s, kind="stable")
    return u[:, order], s[order], vt[order]


def batched_svd_w(x, rotation_variant: bool = False, rel_tol: float = 1e-8) -> SvdWTriple:
    """SVD in the ``U Sigma U^T W`` form for a batch of square matrices.

    With ``rotation_variant`` every ``W`` is a proper rotation; reflections
    are absorbed by negating singular values (see :func:`_fix_reflection`).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ValueError(f"batched_svd_w expects n x m x m, got {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = _first_bad(~np.isfinite(x))
        raise NumericalDomainError("non-finite SVD input", batch_index=bad)
    u, s, vt = _map_batch(np.linalg.svd, x)
    w = np.matmul(u, vt)
    if rotation_variant:
        det = np.linalg.det(w)
        for i in np.nonzero(det < 0)[0]:
            u[i], s[i], vt[i] = _fix_reflection(u[i], s[i], vt[i], rel_tol)
        w = np.matmul(u, vt)
    return SvdWTriple(u, s, w)


# ---------------------------------------------------------------------------
# discrete Fourier transform along the series axis

def dft_batch(values, direction: str = "forward"):
    """DFT along axis 0 with ``omega = exp(-2 pi i / K)``; the inverse carries ``1/K``."""
    values = np.asarray(values)
    k = values.shape[0]
    if k < 1 or k & (k - 1):
        raise ValueError(f"series length {k} is not a power of two")
    if direction == "forward":
        return np.fft.fft(values, axis=0)
    if direction == "inverse":
        return np.fft.ifft(values, axis=0)
    raise ValueError(f"unknown direction {direction!r}")
