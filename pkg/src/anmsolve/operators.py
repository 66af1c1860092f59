"""Registered graph operators.

Each operator supplies shape inference, a forward map, a Jacobian-vector
product and the Taylor bias at order ``k``.  ``jvp`` must accept tangents
with extra leading axes (``(L, batch, *item)``) so the framework can push a
whole basis through in one call when it materializes per-item Jacobian
blocks.  ``None`` stands for a zero tangent everywhere.
"""
from __future__ import annotations

import math

import numpy as np

from . import taylor as TP
from . import taylor_svd as TS
from . import tensor as T
from .graph import register_operator


def _add_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Operator:
    """Base class; subclasses set ``name``, ``arity`` and ``n_out``."""

    name: str = ""
    arity = 1
    n_out = 1

    def infer(self, *shapes):
        raise NotImplementedError

    def forward(self, *xs):
        raise NotImplementedError

    def jvp(self, ctx, *dxs):
        raise NotImplementedError

    def bias(self, ctx, k, ins, outs):
        """Order-k coefficients of the outputs with every order-k input zeroed."""
        return None

    def finish(self, ctx, k, dins, q):
        lin = [None] * self.n_out if all(d is None for d in dins) else self.jvp(ctx, *dins)
        q = q if q is not None else [None] * self.n_out
        return [_add_opt(a, b) for a, b in zip(lin, q)]

    def local_jacobian(self, ctx, oi, ii, in_shapes):
        """Per-item block ``d out_oi / d in_ii`` as ``("dense", (batch, s_out, s_in))``."""
        shape = in_shapes[ii]
        batch, s_in = shape[0], math.prod(shape[1:])
        basis = np.eye(s_in).reshape((s_in, 1) + shape[1:])
        basis = np.broadcast_to(basis, (s_in,) + shape)
        dins = [None] * self.arity
        dins[ii] = basis
        out = self.jvp(ctx, *dins)[oi]
        if out is None:
            return "zero", None
        if "out_shape" in ctx:
            # a per-item scalar operand yields an unexpanded tangent
            out = np.broadcast_to(out, (s_in,) + tuple(ctx["out_shape"]))
        return "dense", np.ascontiguousarray(out.reshape(s_in, batch, -1).transpose(1, 2, 0))


def _check_same_ndim(sa, sb):
    if len(sa) != len(sb):
        raise ValueError(f"operands need equal rank, got {sa} and {sb}")
    return T.check_broadcast(sa, sb)


class _Elementwise(Operator):
    """Elementwise maps; equal-shape inputs give diagonal Jacobian blocks."""

    def infer(self, *shapes):
        out = shapes[0]
        for s in shapes[1:]:
            out = _check_same_ndim(out, s)
        return [out]

    def local_jacobian(self, ctx, oi, ii, in_shapes):
        if in_shapes[ii] != ctx["out_shape"]:
            return super().local_jacobian(ctx, oi, ii, in_shapes)
        dins = [None] * self.arity
        dins[ii] = np.ones(in_shapes[ii])
        d = self.jvp(ctx, *dins)[0]
        if d is None:
            return "zero", None
        d = np.broadcast_to(d, ctx["out_shape"])
        return "diag", d.reshape(d.shape[0], -1)


@register_operator
class Add(_Elementwise):
    name = "add"
    arity = 2

    def forward(self, x, y):
        out = T.add(x, y)
        return [out], {"out_shape": out.shape}

    def jvp(self, ctx, dx, dy):
        return [_add_opt(dx, dy)]


@register_operator
class Sub(_Elementwise):
    name = "sub"
    arity = 2

    def forward(self, x, y):
        out = T.sub(x, y)
        return [out], {"out_shape": out.shape}

    def jvp(self, ctx, dx, dy):
        return [_add_opt(dx, None if dy is None else -dy)]


@register_operator
class Mul(_Elementwise):
    name = "mul"
    arity = 2

    def forward(self, x, y):
        out = T.mul(x, y)
        return [out], {"x": x, "y": y, "out_shape": out.shape}

    def jvp(self, ctx, dx, dy):
        a = None if dx is None else dx * ctx["y"]
        b = None if dy is None else ctx["x"] * dy
        return [_add_opt(a, b)]

    def bias(self, ctx, k, ins, outs):
        return [TP.mul_bias(ins[0], ins[1], k)]


@register_operator
class Div(_Elementwise):
    name = "div"
    arity = 2

    def forward(self, x, y):
        out = T.div(x, y)
        return [out], {"f": out, "y": y, "out_shape": out.shape}

    def jvp(self, ctx, dx, dy):
        num = _add_opt(dx, None if dy is None else -ctx["f"] * dy)
        return [None if num is None else num / ctx["y"]]

    def bias(self, ctx, k, ins, outs):
        return [TP.div_bias(outs[0], ins[1], k)]


class _Unary(_Elementwise):
    def forward(self, x):
        out = self._f(x)
        return [out], {"x": x, "f": out, "out_shape": out.shape}


@register_operator
class Neg(_Unary):
    name = "neg"

    def _f(self, x):
        return -x

    def jvp(self, ctx, dx):
        return [None if dx is None else -dx]


@register_operator
class Scale(_Unary):
    name = "scale"

    def __init__(self, value=1.0):
        self.value = float(value)

    def _f(self, x):
        return self.value * x

    def jvp(self, ctx, dx):
        return [None if dx is None else self.value * dx]


@register_operator
class Shift(_Unary):
    name = "shift"

    def __init__(self, value=0.0):
        self.value = float(value)

    def _f(self, x):
        return x + self.value

    def jvp(self, ctx, dx):
        return [dx]


@register_operator
class Log(_Unary):
    name = "log"

    def _f(self, x):
        return T.log(x)

    def jvp(self, ctx, dx):
        return [None if dx is None else dx / ctx["x"]]

    def bias(self, ctx, k, ins, outs):
        return [TP.log_bias(ins[0], outs[0], k)]


@register_operator
class Pow(_Unary):
    """``x ** r`` for a constant real exponent."""

    name = "pow"

    def __init__(self, exponent=2.0):
        self.r = float(exponent)

    def forward(self, x):
        out = T.pow_const(x, self.r)
        ctx = {"x": x, "f": out, "out_shape": out.shape,
               "int_path": TP.pow_uses_integer_path(x, self.r),
               "slope": TP.pow_slope_factor(x, self.r)}
        return [out], ctx

    def jvp(self, ctx, dx):
        return [None if dx is None else ctx["slope"] * dx]

    def bias(self, ctx, k, ins, outs):
        if ctx["int_path"]:
            return [TP.pow_int_bias(ins[0], self.r, k)]
        return [TP.pow_bias(ins[0], outs[0], self.r, k)]


@register_operator
class SumItems(Operator):
    """Sum of all item entries, giving one value per batch item."""

    name = "sum_items"

    def infer(self, shape):
        return [(shape[0],) + (1,) * (len(shape) - 1)]

    def forward(self, x):
        axes = tuple(range(1, x.ndim))
        return [x.sum(axis=axes, keepdims=True)], {"ndim": x.ndim}

    def jvp(self, ctx, dx):
        if dx is None:
            return [None]
        axes = tuple(range(dx.ndim - ctx["ndim"] + 1, dx.ndim))
        return [dx.sum(axis=axes, keepdims=True)]


# ---------------------------------------------------------------------------
# matrix operators

def _check_mat(shape):
    if len(shape) != 3:
        raise ValueError(f"expected batch x m x n, got {shape}")


@register_operator
class MatMul(Operator):
    name = "matmul"
    arity = 2

    def infer(self, sa, sb):
        _check_mat(sa)
        _check_mat(sb)
        if sa[0] != sb[0] or sa[2] != sb[1]:
            raise ValueError(f"cannot multiply {sa} by {sb}")
        return [(sa[0], sa[1], sb[2])]

    def forward(self, x, y):
        return [T.batched_matmul(x, y)], {"x": x, "y": y}

    def jvp(self, ctx, dx, dy):
        a = None if dx is None else np.matmul(dx, ctx["y"])
        b = None if dy is None else np.matmul(ctx["x"], dy)
        return [_add_opt(a, b)]

    def bias(self, ctx, k, ins, outs):
        return [TP.matmul_bias(ins[0], ins[1], k)]


@register_operator
class Transpose(Operator):
    name = "transpose"

    def infer(self, s):
        _check_mat(s)
        return [(s[0], s[2], s[1])]

    def forward(self, x):
        return [np.swapaxes(x, -1, -2)], {}

    def jvp(self, ctx, dx):
        return [None if dx is None else np.swapaxes(dx, -1, -2)]


def _check_square(s):
    _check_mat(s)
    if s[1] != s[2]:
        raise ValueError(f"expected square matrices, got {s}")


@register_operator
class Inverse(Operator):
    name = "inv"

    def infer(self, s):
        _check_square(s)
        return [s]

    def forward(self, x):
        f = T.batched_inverse(x)
        return [f], {"f": f}

    def jvp(self, ctx, dx):
        return [None if dx is None else TP.matinv_slope(ctx["f"], dx)]

    def bias(self, ctx, k, ins, outs):
        return [TP.matinv_bias(outs[0], ins[0], ctx["f"], k)]


@register_operator
class Det(Operator):
    """Determinant, returned as a ``batch x 1 x 1`` tensor."""

    name = "det"

    def infer(self, s):
        _check_square(s)
        return [(s[0], 1, 1)]

    def forward(self, x):
        d = T.batched_det(x)
        ctx = {"x0": x, "cof": TP.det_slope(x), "inc": None}
        return [np.asarray(d).reshape(-1, 1, 1)], ctx

    def jvp(self, ctx, dx):
        if dx is None:
            return [None]
        return [(ctx["cof"] * dx).sum(axis=(-1, -2))[..., None, None]]

    def bias(self, ctx, k, ins, outs):
        x = ins[0]
        if x.shape[-1] > 3:
            q = TP.det_bias_fft(x[:k], k)
        else:
            inc = ctx["inc"]
            if inc is None or len(inc.cols) > k:
                inc = ctx["inc"] = TP.IncrementalDet(x[0])
            # catch up on orders whose bias was skipped by the zero fast path
            for j in range(len(inc.cols), k):
                inc.bias(j)
                inc.commit(x[j])
            q = inc.bias(k)
        return [np.asarray(q).reshape(-1, 1, 1)]


@register_operator
class SvdW(Operator):
    """``X = U diag(sigma) U^T W``; outputs ``(U, sigma, W)``.

    When neither ``U`` nor ``sigma`` has a consumer the expansion switches to
    the polar form ``X = P W``, which stays well defined for repeated
    singular values.
    """

    name = "svd_w"
    n_out = 3

    def __init__(self, rotation_variant=False):
        self.rotation_variant = bool(rotation_variant)
        self.polar = False

    def set_consumed(self, flags):
        self.polar = not flags[0] and not flags[1]

    def infer(self, s):
        _check_square(s)
        return [s, s[:2], s]

    def forward(self, x):
        trip = T.batched_svd_w(x, self.rotation_variant)
        ctx = {"u0": trip.U, "s0": trip.sigma, "w0": trip.W, "x0": x, "polar": self.polar}
        if self.polar:
            TS._check_invertible(trip.sigma)
            ctx["P"] = {0: (trip.U * trip.sigma[..., None, :]) @ np.swapaxes(trip.U, -1, -2)}
        return [trip.U, trip.sigma, trip.W], ctx

    def jvp(self, ctx, dx):
        if dx is None:
            return [None, None, None]
        if ctx["polar"]:
            _, wk = TS.polar_slope(ctx["u0"], ctx["s0"], ctx["w0"], ctx["x0"], dx)
            return [None, None, wk]
        return list(TS.svdw_slope(ctx["u0"], ctx["s0"], ctx["w0"], dx))

    def bias(self, ctx, k, ins, outs):
        if ctx["polar"]:
            p = np.stack([ctx["P"][i] for i in range(k)])
            pk, wk = TS.polar_bias(ctx["u0"], ctx["s0"], ins[0], p, outs[2], k)
            return [pk, None, wk]
        return list(TS.svdw_bias(outs[0], outs[1], outs[2], k))

    def finish(self, ctx, k, dins, q):
        if not ctx["polar"]:
            return super().finish(ctx, k, dins, q)
        pk, wk = (None, None) if q is None else (q[0], q[2])
        if dins[0] is not None:
            lp, lw = TS.polar_slope(ctx["u0"], ctx["s0"], ctx["w0"], ctx["x0"], dins[0])
            pk, wk = _add_opt(lp, pk), _add_opt(lw, wk)
        ctx["P"][k] = np.zeros_like(ctx["x0"]) if pk is None else pk
        return [None, None, wk]

    def local_jacobian(self, ctx, oi, ii, in_shapes):
        if ctx["polar"] and oi != 2:
            return "zero", None
        return super().local_jacobian(ctx, oi, ii, in_shapes)
