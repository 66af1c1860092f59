"""Circle-ellipse intersection: a two-unknown smoke problem for the solver.

The ellipse ``f_e = 2x^2 - 5x + y^2 - 4y - 2xy - 5`` passes through
``(0, -1)``.  The circle ``f_c = (x + 1)^2 + y^2 - 8`` does not, so the
homotopy grows a concentric circle of radius ``sqrt(2 + 6 lam)`` from the
one through ``(0, -1)`` until it matches ``c`` at ``lam = 1``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .anm import ContinuationOptions, ContinuationTrace, continuation, equational_continuation
from .graph import ComputeGraph, SparseAffineMap

START = np.array([0.0, -1.0])
# the lam-direction of the homotopy: the circle's constant moves from -2 to -8
LAM_VEC = np.array([0.0, -6.0])


def ellipse(x, y):
    return 2 * x**2 - 5 * x + y**2 - 4 * y - 2 * x * y - 5


def circle(x, y):
    return (x + 1) ** 2 + y**2 - 8


def _unknowns(g):
    X = g.input(SparseAffineMap(sp.csr_matrix([[1.0, 0.0]]), (1, 1)))
    Y = g.input(SparseAffineMap(sp.csr_matrix([[0.0, 1.0]]), (1, 1)))
    return X, Y


def system_graph() -> ComputeGraph:
    """``f(x) = [f_e; f_c + 6]``, zero at the start point; ``f(x) + LAM_VEC = 0`` is the target."""
    g = ComputeGraph(2)
    X, Y = _unknowns(g)
    g.add_output(2 * X**2 - 5 * X + Y**2 - 4 * Y - 2 * X * Y - 5, [[1.0], [0.0]])
    g.add_output((X + 1) ** 2 + Y**2 - 2, [[0.0], [1.0]])
    return g


def homotopy_graph() -> ComputeGraph:
    """``H(x, lam) = f(x) + lam * LAM_VEC`` with the ``lam`` term in the output map."""
    g = system_graph()
    g.set_output_affine(lam_vec=LAM_VEC)
    return g


def residual(xy) -> float:
    """``sqrt((f_e^2 + f_c^2) / 2)`` at the target circle."""
    x, y = xy
    return float(np.sqrt((ellipse(x, y) ** 2 + circle(x, y) ** 2) / 2))


@dataclass
class ToyResult:
    solution: np.ndarray
    residual: float
    trace: ContinuationTrace
    wall_time: float

    @property
    def iterations(self):
        return self.trace.iterations

    def report(self):
        return {"solution": [float(v) for v in self.solution], "iterations": self.iterations,
                "residual": self.residual, "wall_time": self.wall_time,
                "steps": [s.to_dict() for s in self.trace.steps]}


def solve_toy(order=20, use_pade=True, equational=False, eps_rov=1e-6, eps_res=1e-10,
              max_iter=200) -> ToyResult:
    """Run plain or equational continuation from ``(0, -1)``."""
    if order < 3:
        raise ValueError("truncation order must be at least 3")
    opts = ContinuationOptions(order=order, eps_rov=eps_rov, use_pade=use_pade, max_iter=max_iter)
    t0 = time.perf_counter()
    if equational:
        x, trace = equational_continuation(system_graph(), LAM_VEC, START, eps_res, opts)
    else:
        x, trace = continuation(homotopy_graph(), START, 0.0, 1.0, opts)
    return ToyResult(x, residual(x), trace, time.perf_counter() - t0)
