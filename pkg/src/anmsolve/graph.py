"""Symbolic computing graphs over batched tensors.

A :class:`ComputeGraph` describes ``H(x, lam)`` for a flat unknown vector
``x`` and a scalar continuation parameter ``lam``:

* graph inputs are batched tensors ``u_i = M_i x + lam * l_i + c_i`` given by
  :class:`SparseAffineMap` objects (fixed boundary values live in ``c_i``);
* operator vertices transform batched tensors item by item;
* the output is ``H = sum_j B_j vec(y_j) + lam * h + h_0``.

Because every operator acts independently on each batch item, the Jacobian
of any variable with respect to a graph input is block diagonal over the
batch.  :meth:`ComputeGraph.jacobian` accumulates those blocks in reverse
topological order and only at the end assembles the sparse ``P = dH/dx``.

Taylor coefficients are propagated by :class:`Expansion`, which implements
the order-by-order affine structure used by the ANM solver: the order-k
coefficient of every vertex is its Jacobian slope applied to the order-k
input coefficients plus a bias that depends only on lower orders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import GraphBuildError, NumericalDomainError

_REGISTRY: dict[str, type] = {}


def register_operator(cls):
    """Class decorator adding an operator to the registry under ``cls.name``."""
    if not getattr(cls, "name", None):
        raise GraphBuildError("operator class needs a name")
    _REGISTRY[cls.name] = cls
    return cls


def registered_operators():
    return sorted(_REGISTRY)


def _size(shape):
    return math.prod(shape[1:])


class SparseAffineMap:
    """``u = matrix @ x + lam * lam_vec + offset`` reshaped to a batched tensor.

    ``matrix`` has one row per element of the target tensor and one column
    per unknown.  Used in reverse (``B``) form the same class maps a batched
    tensor to a flat vector.
    """

    def __init__(self, matrix, shape, lam_vec=None, offset=None):
        self.matrix = sp.csr_matrix(matrix)
        self.shape = tuple(int(s) for s in shape)
        rows = math.prod(self.shape)
        if self.matrix.shape[0] != rows:
            raise GraphBuildError(f"map has {self.matrix.shape[0]} rows, target needs {rows}")
        self.lam_vec = None if lam_vec is None else np.asarray(lam_vec, float).reshape(rows)
        self.offset = None if offset is None else np.asarray(offset, float).reshape(rows)

    @property
    def n_in(self):
        return self.matrix.shape[1]

    def linear(self, x):
        return (self.matrix @ x).reshape(self.shape)

    def __call__(self, x, lam=0.0):
        out = self.matrix @ np.asarray(x, float)
        if self.lam_vec is not None:
            out = out + lam * self.lam_vec
        if self.offset is not None:
            out = out + self.offset
        return out.reshape(self.shape)

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, n_in, lam_vec=None, offset=None):
        m = sp.coo_matrix((vals, (rows, cols)), shape=(math.prod(shape), n_in))
        return cls(m.tocsr(), shape, lam_vec, offset)


class Var:
    """Variable vertex handle; arithmetic operators build graph vertices."""

    __slots__ = ("graph", "id", "shape")
    __array_priority__ = 1000

    def __init__(self, graph, vid, shape):
        self.graph = graph
        self.id = vid
        self.shape = tuple(shape)

    @property
    def batch(self):
        return self.shape[0]

    @property
    def item_shape(self):
        return self.shape[1:]

    def __repr__(self):
        return f"Var({self.id}, shape={self.shape})"

    def _lift(self, other):
        if isinstance(other, Var):
            return other
        return self.graph.constant(np.full((self.batch,) + (1,) * max(1, len(self.item_shape)),
                                           float(other)))

    def __add__(self, o):
        if not isinstance(o, Var):
            return self.graph.apply("shift", self, value=float(o))
        return self.graph.apply("add", self, o)

    __radd__ = __add__

    def __sub__(self, o):
        if not isinstance(o, Var):
            return self.graph.apply("shift", self, value=-float(o))
        return self.graph.apply("sub", self, o)

    def __rsub__(self, o):
        return self.graph.apply("shift", -self, value=float(o))

    def __mul__(self, o):
        if not isinstance(o, Var):
            return self.graph.apply("scale", self, value=float(o))
        return self.graph.apply("mul", self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if not isinstance(o, Var):
            return self.graph.apply("scale", self, value=1.0 / float(o))
        return self.graph.apply("div", self, o)

    def __rtruediv__(self, o):
        return self.graph.apply("div", self._lift(o), self)

    def __neg__(self):
        return self.graph.apply("neg", self)

    def __pow__(self, r):
        return self.graph.apply("pow", self, exponent=float(r))

    def __matmul__(self, o):
        return self.graph.apply("matmul", self, o)

    @property
    def T(self):
        return self.graph.apply("transpose", self)


@dataclass
class _Node:
    op: object
    inputs: tuple
    outputs: tuple


@dataclass
class _Output:
    var: int
    matrix: sp.csr_matrix


class ComputeGraph:
    """DAG of registered operators describing ``H(x, lam)`` with ``x`` of length ``n``."""

    def __init__(self, n: int):
        self.n = int(n)
        self.shapes: list[tuple] = []
        self.producer: list = []      # node index or ("input", i) or ("const", value)
        self.nodes: list[_Node] = []
        self.inputs: list[tuple[int, SparseAffineMap]] = []
        self.outputs: list[_Output] = []
        self.out_lam = None
        self.out_offset = None
        self._n_out = None

    # -- construction -----------------------------------------------------
    def _new_var(self, shape, producer):
        self.shapes.append(tuple(int(s) for s in shape))
        self.producer.append(producer)
        return Var(self, len(self.shapes) - 1, shape)

    def input(self, amap: SparseAffineMap) -> Var:
        if amap.n_in != self.n:
            raise GraphBuildError(f"input map expects {amap.n_in} unknowns, graph has {self.n}")
        if len(amap.shape) < 2:
            raise GraphBuildError("graph inputs need a batch axis and at least one item axis")
        v = self._new_var(amap.shape, ("input", len(self.inputs)))
        self.inputs.append((v.id, amap))
        return v

    def constant(self, value) -> Var:
        value = np.array(value, dtype=np.float64)
        if value.ndim < 2:
            raise GraphBuildError("constants need a batch axis and at least one item axis")
        value.setflags(write=False)
        return self._new_var(value.shape, ("const", value))

    def apply(self, op_name: str, *inputs: Var, **params):
        """Add an operator vertex; returns one ``Var`` or a tuple for multi-output ops."""
        try:
            cls = _REGISTRY[op_name]
        except KeyError:
            raise GraphBuildError(f"unknown operator {op_name!r}") from None
        for v in inputs:
            if not isinstance(v, Var) or v.graph is not self:
                raise GraphBuildError(f"{op_name}: inputs must be variables of this graph")
        if len(inputs) != cls.arity:
            raise GraphBuildError(f"{op_name} takes {cls.arity} inputs, got {len(inputs)}")
        op = cls(**params)
        try:
            out_shapes = op.infer(*[v.shape for v in inputs])
        except (ValueError, IndexError) as exc:
            raise GraphBuildError(f"{op_name}: {exc}") from None
        idx = len(self.nodes)
        outs = tuple(self._new_var(s, idx) for s in out_shapes)
        self.nodes.append(_Node(op, tuple(v.id for v in inputs), tuple(v.id for v in outs)))
        return outs[0] if len(outs) == 1 else outs

    def add_output(self, var: Var, matrix=None):
        """Add ``matrix @ vec(var)`` to ``H``; ``matrix=None`` means identity."""
        size = math.prod(var.shape)
        m = sp.identity(size, format="csr") if matrix is None else sp.csr_matrix(matrix)
        if m.shape[1] != size:
            raise GraphBuildError(f"output map has {m.shape[1]} columns, variable has {size}")
        if self._n_out is not None and m.shape[0] != self._n_out:
            raise GraphBuildError("output maps disagree on the output length")
        self._n_out = m.shape[0]
        self.outputs.append(_Output(var.id, m))

    def set_output_affine(self, lam_vec=None, offset=None):
        """Constant terms ``lam * lam_vec + offset`` of ``H``."""
        if self._n_out is None:
            raise GraphBuildError("add an output variable first")
        self.out_lam = None if lam_vec is None else np.asarray(lam_vec, float).reshape(self._n_out)
        self.out_offset = None if offset is None else np.asarray(offset, float).reshape(self._n_out)

    @property
    def n_out(self):
        return self._n_out

    def _finalize(self):
        if not self.outputs:
            raise GraphBuildError("graph has no output")
        if self._n_out != self.n:
            raise GraphBuildError(f"H has length {self._n_out} but x has length {self.n}")
        self._update_consumers()

    def _update_consumers(self):
        used = set()
        for node in self.nodes:
            used.update(node.inputs)
        used.update(o.var for o in self.outputs)
        for node in self.nodes:
            hook = getattr(node.op, "set_consumed", None)
            if hook is not None:
                hook([o in used for o in node.outputs])

    # -- evaluation -------------------------------------------------------
    def forward(self, x, lam=0.0):
        """Values of all vertices plus per-node contexts."""
        self._finalize()
        return self._run(x, lam)

    def vertex_values(self, x, lam=0.0):
        """Values of all vertices without requiring a complete ``H``; for inspection."""
        self._update_consumers()
        return self._run(x, lam)[0]

    def _run(self, x, lam):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"x must have shape ({self.n},), got {x.shape}")
        vals: list = [None] * len(self.shapes)
        for vid, amap in self.inputs:
            vals[vid] = amap(x, lam)
        for vid, prod in enumerate(self.producer):
            if isinstance(prod, tuple) and prod[0] == "const":
                vals[vid] = prod[1]
        ctxs = []
        for i, node in enumerate(self.nodes):
            try:
                outs, ctx = node.op.forward(*[vals[j] for j in node.inputs])
            except NumericalDomainError as exc:
                raise NumericalDomainError(str(exc), batch_index=exc.batch_index,
                                           where=f"node {i} ({node.op.name})") from None
            for j, o in zip(node.outputs, outs):
                vals[j] = o
            ctxs.append(ctx)
        return vals, ctxs

    def combine_outputs(self, vals, lam=0.0, with_affine=True):
        h = np.zeros(self.n)
        for out in self.outputs:
            v = vals[out.var]
            if v is not None and not T.is_zero(v):
                h = h + out.matrix @ np.asarray(v).reshape(-1)
        if with_affine:
            if self.out_lam is not None:
                h = h + lam * self.out_lam
            if self.out_offset is not None:
                h = h + self.out_offset
        return h

    def evaluate(self, x, lam=0.0):
        vals, _ = self.forward(x, lam)
        return self.combine_outputs(vals, lam)

    # -- differentiation --------------------------------------------------
    def jacobian(self, x, lam=0.0, state=None):
        """Return ``(P, v)`` with ``P = dH/dx`` (CSC) and ``v = dH/dlam``.

        ``state`` may be a ``(vals, ctxs)`` pair from :meth:`forward` at the
        same point to avoid re-evaluating the graph.
        """
        vals, ctxs = state if state is not None else self.forward(x, lam)
        input_ids = {vid for vid, _ in self.inputs}
        P = sp.csr_matrix((self.n, self.n))
        v = np.zeros(self.n) if self.out_lam is None else self.out_lam.copy()
        for out in self.outputs:
            blocks = self._reverse_blocks(out.var, ctxs, input_ids)
            for vid, amap in self.inputs:
                blk = blocks.get(vid)
                if blk is None:
                    continue
                J = _block_diag(blk)
                BJ = out.matrix @ J
                P = P + BJ @ amap.matrix
                if amap.lam_vec is not None:
                    v = v + BJ @ amap.lam_vec
        return P.tocsc(), v

    def _reverse_blocks(self, out_id, ctxs, input_ids):
        """Per-item blocks ``d out / d var`` for every variable feeding ``out``."""
        shape = self.shapes[out_id]
        batch, s_out = shape[0], _size(shape)
        adj = {out_id: ("eye", batch, s_out)}
        prod = self.producer
        for ni in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[ni]
            if not any(o in adj for o in node.outputs):
                continue
            in_shapes = [self.shapes[j] for j in node.inputs]
            for oi, o in enumerate(node.outputs):
                a = adj.pop(o, None)
                if a is None:
                    continue
                for ii, vin in enumerate(node.inputs):
                    p = prod[vin]
                    if isinstance(p, tuple) and p[0] == "const":
                        continue
                    kind, loc = node.op.local_jacobian(ctxs[ni], oi, ii, in_shapes)
                    if kind == "zero":
                        continue
                    contrib = _chain(a, kind, loc)
                    adj[vin] = contrib if vin not in adj else _accum(adj[vin], contrib)
        return {vid: _dense_adj(a) for vid, a in adj.items() if vid in input_ids}


def _dense_adj(a):
    if isinstance(a, tuple):
        _, batch, s = a
        return np.broadcast_to(np.eye(s), (batch, s, s))
    return a


def _chain(a, kind, loc):
    if isinstance(a, tuple):   # identity adjoint
        if kind == "diag":
            return loc[:, :, None] * np.eye(loc.shape[1])
        return loc
    if kind == "diag":
        return a * loc[:, None, :]
    return np.matmul(a, loc)


def _accum(a, b):
    return _dense_adj(a) + _dense_adj(b)


def _block_diag(blk):
    batch, r, c = blk.shape
    data = np.ascontiguousarray(blk)
    return sp.bsr_matrix((data, np.arange(batch), np.arange(batch + 1)),
                         shape=(batch * r, batch * c)).tocsr()


# ---------------------------------------------------------------------------
# Taylor expansion of a whole graph

class Expansion:
    """Order-by-order Taylor propagation through a graph at ``(x0, lam0)``.

    Usage per order ``k = 1..N``::

        q = exp.bias(k)            # H-coefficient with x_k = lam_k = 0
        ...solve P x_k + lam_k v = -q...
        exp.commit(k, x_k, lam_k)

    ``bias`` runs the graph once with zero order-k inputs so every vertex
    obtains its bias ``b = jvp(0) + q_node``; ``commit`` replays the order
    with the solved inputs, reusing the cached node biases.
    """

    def __init__(self, graph: ComputeGraph, x0, lam0, order: int, state=None):
        self.graph = graph
        self.order = int(order)
        vals, ctxs = state if state is not None else graph.forward(x0, lam0)
        self.ctxs = ctxs
        self.series = []
        for shape, v in zip(graph.shapes, vals):
            s = np.zeros((self.order + 1,) + shape)
            s[0] = v
            self.series.append(s)
        # nonzero flags per variable and order, for the zero fast path
        self.nz = np.zeros((len(graph.shapes), self.order + 1), bool)
        for i, v in enumerate(vals):
            self.nz[i, 0] = not T.is_zero(v)
        self.x = np.zeros((self.order + 1, graph.n))
        self.x[0] = x0
        self.lam = np.zeros(self.order + 1)
        self.lam[0] = lam0
        self._qcache = None
        self._k = 1

    def bias(self, k: int):
        if k != self._k:
            raise ValueError(f"expected order {self._k}, got {k}")
        g = self.graph
        order_k = [None] * len(g.shapes)
        qcache = []
        for ni, node in enumerate(g.nodes):
            ins = [self.series[j] for j in node.inputs]
            outs = [self.series[j] for j in node.outputs]
            if k == 1 or not any(self.nz[j, 1:k].any() for j in node.inputs):
                q = None
            else:
                q = node.op.bias(self.ctxs[ni], k, ins, outs)
            qcache.append(q)
            dins = [order_k[j] for j in node.inputs]
            res = node.op.finish(self.ctxs[ni], k, dins, q)
            for j, r in zip(node.outputs, res):
                order_k[j] = r
        self._qcache = qcache
        return g.combine_outputs(order_k, with_affine=False)

    def commit(self, k: int, xk, lamk):
        if k != self._k or self._qcache is None:
            raise ValueError("call bias(k) before commit(k)")
        g = self.graph
        self.x[k] = xk
        self.lam[k] = lamk
        order_k = [None] * len(g.shapes)
        for vid, amap in g.inputs:
            u = amap.matrix @ xk
            if amap.lam_vec is not None:
                u = u + lamk * amap.lam_vec
            order_k[vid] = u.reshape(amap.shape)
        for ni, node in enumerate(g.nodes):
            dins = [order_k[j] for j in node.inputs]
            res = node.op.finish(self.ctxs[ni], k, dins, self._qcache[ni])
            for j, r in zip(node.outputs, res):
                order_k[j] = r
        for j, r in enumerate(order_k):
            if r is not None:
                self.series[j][k] = r
                self.nz[j, k] = bool(np.any(r != 0))
        self._qcache = None
        self._k += 1

    def output_coefficient(self, k: int):
        """Coefficient of ``a^k`` in ``H(x(a), lam(a))`` from the stored series."""
        g = self.graph
        h = g.combine_outputs([s[k] for s in self.series], with_affine=False)
        if g.out_lam is not None:
            h = h + self.lam[k] * g.out_lam
        if k == 0 and g.out_offset is not None:
            h = h + g.out_offset
        return h


# ---------------------------------------------------------------------------
# module-level helpers mirroring the graph API

def build_op(graph: ComputeGraph, op_name: str, inputs, **params):
    return graph.apply(op_name, *inputs, **params)


def evaluate(graph: ComputeGraph, x0, lam0=0.0):
    return graph.evaluate(x0, lam0)


def jacobian(graph: ComputeGraph, x0, lam0=0.0):
    return graph.jacobian(x0, lam0)
