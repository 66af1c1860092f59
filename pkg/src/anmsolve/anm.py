"""Asymptotic Numerical Method: series solve, step-size control and continuation.

A continuation step expands the solution curve of ``H(x, lam) = 0`` around
the current point as power series ``x(a)``, ``lam(a)`` in the
pseudo-arclength ``a``.  Every order solves the same bordered system::

    [ P     v    ] [x_k  ]   [ -q_k  ]
    [ x_1^T lam_1] [lam_k] = [ [k=1] ]

with ``P = dH/dx`` and ``v = dH/dlam`` factorized once per step.  The step
length comes from the Taylor or Padé range of validity, whichever is larger.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .errors import (FactorizationError, InvalidStartError, MaxIterationsError,
                     NoProgressError, SolverError)
from .graph import ComputeGraph, Expansion
from .pade import PadeApproximant, rov_pade

log = logging.getLogger(__name__)

# a_r is capped at this multiple of the straight-line distance to the target
STEP_CAP = 10.0


def rms(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(np.mean(v * v))) if v.size else 0.0


# ---------------------------------------------------------------------------
# homotopies

class Homotopy:
    """``H(x, lam) = G(x, lam) + lam * lam_vec + offset`` for a compute graph ``G``.

    The extra affine terms let the equational continuation redefine ``H``
    every iteration without rebuilding the graph.
    """

    def __init__(self, graph: ComputeGraph, lam_vec=None, offset=None):
        self.graph = graph
        self.lam_vec = None if lam_vec is None else np.asarray(lam_vec, float)
        self.offset = None if offset is None else np.asarray(offset, float)

    @property
    def n(self):
        return self.graph.n

    def _affine(self, lam):
        out = 0.0
        if self.lam_vec is not None:
            out = out + lam * self.lam_vec
        if self.offset is not None:
            out = out + self.offset
        return out

    def residual_from_state(self, vals, lam):
        return self.graph.combine_outputs(vals, lam) + self._affine(lam)

    def __call__(self, x, lam):
        return self.graph.evaluate(x, lam) + self._affine(lam)

    def linearize(self, state, x, lam):
        P, v = self.graph.jacobian(x, lam, state=state)
        if self.lam_vec is not None:
            v = v + self.lam_vec
        return P, v


def as_homotopy(h) -> Homotopy:
    return h if isinstance(h, Homotopy) else Homotopy(h)


# ---------------------------------------------------------------------------
# bordered system

@dataclass
class BorderedSystem:
    """Factorized slope matrix plus the pseudo-arclength row."""

    P: sp.spmatrix
    v: np.ndarray
    lu: object = None
    y: Optional[np.ndarray] = None
    x1: Optional[np.ndarray] = None
    lam1: Optional[float] = None

    @classmethod
    def factorize(cls, P, v):
        P = sp.csc_matrix(P)
        v = np.asarray(v, dtype=np.float64)
        try:
            lu = splu(P)
        except RuntimeError as exc:
            raise FactorizationError(f"slope matrix factorization failed: {exc}") from None
        y = lu.solve(-v)
        if not np.all(np.isfinite(y)):
            raise FactorizationError("slope matrix is numerically singular")
        return cls(P, v, lu, y)

    def solve(self, q, k: int):
        """Order-k coefficients ``(x_k, lam_k)`` for the bias ``q``."""
        if k == 1:
            # q_1 = 0, so x_1 = lam_1 * y and the row normalizes the tangent
            lam1 = 1.0 / math.sqrt(float(self.y @ self.y) + 1.0)
            x1 = lam1 * self.y
            self.x1, self.lam1 = x1, lam1
            return x1, lam1
        if self.x1 is None:
            raise ValueError("order 1 must be solved first")
        z = self.lu.solve(-np.asarray(q, dtype=np.float64))
        lam = -float(self.x1 @ z) / (float(self.x1 @ self.y) + self.lam1)
        return z + lam * self.y, lam


def bordered_solve(sys: BorderedSystem, q, k: int):
    return sys.solve(q, k)


# ---------------------------------------------------------------------------
# series solve

@dataclass
class SeriesState:
    """Taylor coefficients ``x[i]``, ``lam[i]`` for ``i = 0..N``."""

    x: np.ndarray
    lam: np.ndarray
    system: Optional[BorderedSystem] = None
    expansion: Optional[Expansion] = None

    @property
    def order(self):
        return self.x.shape[0] - 1

    def augmented(self):
        return np.concatenate([self.x, self.lam[:, None]], axis=1)


def start_tolerance(x0) -> float:
    x0 = np.asarray(x0, dtype=np.float64)
    n = max(x0.size, 1)
    return 1e-6 * (1.0 + np.linalg.norm(x0) / math.sqrt(n))


def solve_coefficients(h, x0, lam0: float, order: int, start_tol=None) -> SeriesState:
    """Series coefficients of the solution curve through ``(x0, lam0)``."""
    h = as_homotopy(h)
    x0 = np.asarray(x0, dtype=np.float64)
    state = h.graph.forward(x0, lam0)
    r0 = rms(h.residual_from_state(state[0], lam0))
    tol = start_tolerance(x0) if start_tol is None else start_tol
    if not r0 <= tol:
        raise InvalidStartError(f"starting residual RMS {r0:.3e} exceeds {tol:.3e}")
    P, v = h.linearize(state, x0, lam0)
    bs = BorderedSystem.factorize(P, v)
    exp = Expansion(h.graph, x0, lam0, order, state)
    for k in range(1, order + 1):
        q = exp.bias(k)
        xk, lk = bs.solve(q, k)
        exp.commit(k, xk, lk)
    return SeriesState(exp.x, exp.lam, bs, exp)


# ---------------------------------------------------------------------------
# ranges of validity

def rov_taylor(u, eps_rov: float) -> float:
    """``(eps ||u_1|| / ||u_N||)^(1/(N-1))``; ``inf`` for an exactly linear series.

    Trailing coefficients that are exactly zero mean the series terminates;
    the formula then uses the highest nonzero order.  Rapidly converging
    series (tiny but nonzero ``u_N``) keep the plain formula, which gives a
    large but finite range.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    norms = np.linalg.norm(u, axis=1)
    n1 = norms[1]
    nz = np.nonzero(norms[2:] > 0)[0]
    if nz.size == 0 or n1 == 0:
        return math.inf
    top = int(nz[-1]) + 2
    return float((eps_rov * n1 / norms[top]) ** (1.0 / (top - 1)))


class TaylorApproximant:
    kind = "taylor"

    def __init__(self, u):
        self.u = np.asarray(u, dtype=np.float64)

    def __call__(self, a):
        return np.polynomial.polynomial.polyval(float(a), self.u)


class _PadeWrapper:
    kind = "pade"

    def __init__(self, pade: PadeApproximant):
        self.pade = pade

    def __call__(self, a):
        return self.pade(a)


@dataclass
class StepRecord:
    """One accepted continuation step."""

    x: np.ndarray
    lam: float
    a: float
    a_m: float
    a_r: float
    a_p: float
    kind: str
    residual: float
    lam_start: float = 0.0
    approximant: object = None

    def to_dict(self):
        return {"lam": self.lam, "a": self.a, "a_m": self.a_m, "a_r": self.a_r,
                "a_p": self.a_p, "kind": self.kind, "residual": self.residual}


@dataclass
class ContinuationTrace:
    steps: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def iterations(self):
        return len(self.steps)

    def lams(self):
        return np.array([s.lam for s in self.steps])

    def residuals(self):
        return np.array([s.residual for s in self.steps])

    def state_at(self, lam: float):
        """State on the stored approximants where the homotopy parameter equals ``lam``."""
        for s in self.steps:
            if s.lam_start <= lam <= s.lam and s.approximant is not None:
                if lam == s.lam:
                    return s.x.copy()
                g = lambda a: s.approximant(a)[-1] - lam
                a = brentq(g, 0.0, s.a, xtol=1e-14)
                return s.approximant(a)[:-1]
        raise ValueError(f"lam={lam} is outside the traced range")


@dataclass
class ContinuationOptions:
    """Knobs shared by the plain and equational continuation drivers."""

    order: int = 20
    eps_rov: float = 1e-4
    use_pade: bool = True
    max_iter: int = 200
    min_step: float = 1e-12
    start_tol: Optional[float] = None
    keep_approximants: bool = False
    # optional hook: returns False to reject a state, which halves the step
    accept: Optional[Callable] = None
    max_halvings: int = 30
    on_step: Optional[Callable] = None


def _choose_step(series: SeriesState, lam_t: float, opts: ContinuationOptions):
    """Pick the approximant and the step ``a'`` for one continuation iteration."""
    u = series.augmented()
    lam0 = float(series.lam[0])
    a_r = rov_taylor(u, opts.eps_rov)
    taylor = TaylorApproximant(u)
    a_lin = (lam_t - lam0) / float(series.lam[1])
    if math.isinf(a_r):
        # the curve is a straight line: go exactly to the target
        a_r = a_lin
    else:
        # a nearly linear curve has a huge range; stepping far past the target
        # only loses digits to cancellation in x_0 + x_1 a
        a_r = min(a_r, STEP_CAP * a_lin)
    a_p = 0.0
    best = taylor
    if opts.use_pade and series.order >= 3:
        try:
            pade = PadeApproximant(u)
            a_p = rov_pade(u, a_r, opts.eps_rov, pade)
            if a_p > a_r and not pade.degenerate:
                cand = _PadeWrapper(pade)
                if cand(a_p)[-1] > lam0:
                    best = cand
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("Padé construction failed: %s", exc)
    a_m = a_p if best.kind == "pade" else a_r
    return best, a_m, a_r, a_p


def _solve_lam(approx, a_m, lam0, target):
    lam_m = approx(a_m)[-1]
    if lam_m <= target:
        return a_m
    return brentq(lambda a: approx(a)[-1] - target, 0.0, a_m, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def continuation_step(h: Homotopy, x0, lam0, lam_t, opts: ContinuationOptions,
                      check_start: bool = True):
    """One iteration of the continuation loop; returns a :class:`StepRecord`.

    Later iterations start from approximate states whose residual is the
    previous step's truncation error, so only the first one is checked.
    """
    start_tol = opts.start_tol if check_start else math.inf
    series = solve_coefficients(h, x0, lam0, opts.order, start_tol)
    approx, a_m, a_r, a_p = _choose_step(series, lam_t, opts)
    if approx(a_m)[-1] <= lam0 and approx.kind == "pade":
        approx, a_m = TaylorApproximant(series.augmented()), a_r
    if a_m < opts.min_step or approx(a_m)[-1] <= lam0:
        raise NoProgressError(f"step length {a_m:.3e} makes no progress at lam={lam0:.6g}")
    a = _solve_lam(approx, a_m, lam0, lam_t)
    hit_target = approx(a_m)[-1] >= lam_t
    for halvings in range(opts.max_halvings + 1):
        u = approx(a)
        x, lam = u[:-1], float(u[-1])
        if hit_target and halvings == 0:
            lam = float(lam_t)   # the root solve lands on the target up to rounding
        if opts.accept is None or opts.accept(x, lam):
            break
        a *= 0.5
    else:
        raise NoProgressError(f"no acceptable state along the step from lam={lam0:.6g}")
    if not lam > lam0:
        raise NoProgressError(f"lambda did not increase from {lam0:.6g}")
    res = rms(h(x, lam))
    rec = StepRecord(x=x, lam=lam, a=a, a_m=a_m, a_r=a_r, a_p=a_p, kind=approx.kind,
                     residual=res, lam_start=float(lam0),
                     approximant=approx if opts.keep_approximants else None)
    return rec


def continuation(h, x0, lam0: float, lam_t: float, opts: ContinuationOptions | None = None):
    """Trace ``H(x, lam) = 0`` from ``(x0, lam0)`` to ``lam = lam_t``.

    Returns ``(x, trace)``.
    """
    opts = opts or ContinuationOptions()
    h = as_homotopy(h)
    t0 = time.perf_counter()
    trace = ContinuationTrace()
    x = np.asarray(x0, dtype=np.float64).copy()
    lam = float(lam0)
    while lam < lam_t:
        if trace.iterations >= opts.max_iter:
            raise MaxIterationsError(f"no convergence in {opts.max_iter} iterations", trace)
        try:
            rec = continuation_step(h, x, lam, lam_t, opts, check_start=not trace.steps)
        except SolverError as exc:
            exc.trace = trace
            raise
        trace.steps.append(rec)
        if opts.on_step is not None:
            opts.on_step(rec)
        log.info("step %d: lam=%.6g a=%.3g (%s) residual=%.3e",
                 trace.iterations, rec.lam, rec.a, rec.kind, rec.residual)
        x, lam = rec.x, rec.lam
    trace.wall_time = time.perf_counter() - t0
    return x, trace


def equational_continuation(f, v, x0, eps_res: float = 1e-10,
                            opts: ContinuationOptions | None = None):
    """Solve ``f(x) + v = 0`` by redefining the homotopy at every iteration.

    Iteration ``k`` follows ``H_k(x, t) = f(x) + t (v + f(x_k)) - f(x_k)``
    from ``t = 0`` for one step toward ``t = 1``; the residual shrinks
    roughly by ``1 - t`` per step.  ``f`` is a compute graph whose value
    must not depend on its ``lam`` argument.  Trace entries record the
    cumulative progress ``sum t`` as ``lam`` so it increases strictly.
    """
    opts = opts or ContinuationOptions()
    graph = f.graph if isinstance(f, Homotopy) else f
    v = np.asarray(v, dtype=np.float64)
    t0 = time.perf_counter()
    trace = ContinuationTrace()
    x = np.asarray(x0, dtype=np.float64).copy()
    fx = graph.evaluate(x, 0.0)
    res = rms(fx + v)
    progress = 0.0
    while res > eps_res:
        if trace.iterations >= opts.max_iter:
            raise MaxIterationsError(f"residual {res:.3e} after {opts.max_iter} iterations", trace)
        hk = Homotopy(graph, lam_vec=v + fx, offset=-fx)
        try:
            rec = continuation_step(hk, x, 0.0, 1.0, opts)
        except SolverError as exc:
            exc.trace = trace
            raise
        fx_new = graph.evaluate(rec.x, 0.0)
        res_new = rms(fx_new + v)
        if not res_new <= res * (1 + 1e-6):
            raise NoProgressError(f"residual stagnated at {res:.3e} (target {eps_res:.1e})", trace)
        progress += rec.lam
        rec.lam_start, rec.lam = progress - rec.lam, progress
        rec.residual = res_new
        trace.steps.append(rec)
        if opts.on_step is not None:
            opts.on_step(rec)
        log.info("equational step %d: t=%.6g residual=%.3e (%s)",
                 trace.iterations, rec.lam - rec.lam_start, res_new, rec.kind)
        x, fx, res = rec.x, fx_new, res_new
    trace.wall_time = time.perf_counter() - t0
    return x, trace
