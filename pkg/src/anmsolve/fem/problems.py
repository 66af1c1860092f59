"""Force graphs and drivers for forward, inverse and handle-controlled problems.

Unknowns are the coordinates of free nodes, flattened node-major.  Fixed
nodes and handles enter the graph through the constant offset of the input
map; moving handles additionally get a ``lam`` direction so that
``handles(lam) = start + lam * (target - start)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from ..anm import ContinuationOptions, ContinuationTrace, continuation, equational_continuation, rms
from ..errors import ConfigError, InvertedElementError, NoProgressError
from ..graph import ComputeGraph, SparseAffineMap
from .material import MaterialSpec, build_cauchy, build_pk1
from .mesh import TetMesh, force_map, shape_matrices, shape_matrix_map

PROBLEM_KINDS = ("forward", "inverse", "deform")


@dataclass
class SolverSettings:
    order: int = 20
    eps_rov: float = 1e-4
    eps_res: float = 1e-10
    max_iter: int = 200
    use_pade: bool = True
    refine_order: int = 6

    def __post_init__(self):
        if self.order < 3:
            raise ConfigError("truncation order must be at least 3")
        if not (self.eps_rov > 0 and self.eps_res > 0):
            raise ConfigError("tolerances must be positive")

    def options(self, **kw) -> ContinuationOptions:
        base = dict(order=self.order, eps_rov=self.eps_rov, use_pade=self.use_pade,
                    max_iter=self.max_iter)
        base.update(kw)
        return ContinuationOptions(**base)


@dataclass
class HandleSpec:
    """Handle nodes with absolute positions at each waypoint, shape ``(K, len(nodes), 3)``."""

    nodes: np.ndarray
    waypoints: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64).ravel()
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, len(self.nodes), 3)


@dataclass
class ProblemConfig:
    kind: str = "forward"
    material: MaterialSpec = field(default_factory=MaterialSpec)
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fixed_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    handles: list = field(default_factory=list)
    solver: SolverSettings = field(default_factory=SolverSettings)
    force: Optional[np.ndarray] = None    # explicit nodal force (n, 3); overrides gravity

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        self.fixed_nodes = np.unique(np.asarray(self.fixed_nodes, dtype=np.int64).ravel())

    def handle_nodes(self):
        if not self.handles:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([h.nodes for h in self.handles])

    def validate(self, mesh: TetMesh):
        n = mesh.n_nodes
        hn = self.handle_nodes()
        for name, idx in (("fixed", self.fixed_nodes), ("handle", hn)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ConfigError(f"{name} node index out of range")
        if np.unique(hn).size != hn.size:
            raise ConfigError("a node appears in more than one handle")
        if np.intersect1d(hn, self.fixed_nodes).size:
            raise ConfigError("fixed and handle node sets overlap")
        counts = {h.waypoints.shape[0] for h in self.handles if h.waypoints.shape[0] > 0}
        if len(counts) > 1:
            raise ConfigError("all moving handles need the same number of waypoints")
        if self.kind == "deform" and not self.handles:
            raise ConfigError("deform problems need at least one handle")
        if self.force is not None:
            self.force = np.asarray(self.force, dtype=np.float64).reshape(n, 3)


def external_force(mesh: TetMesh, config: ProblemConfig) -> np.ndarray:
    """Nodal external force ``(n, 3)``: explicit force or lumped gravity."""
    if config.force is not None:
        return np.asarray(config.force, dtype=np.float64).reshape(mesh.n_nodes, 3)
    return mesh.lumped_mass(config.material.density)[:, None] * config.gravity[None, :]


@dataclass
class ForceProblem:
    """A force graph over free-node unknowns plus the bookkeeping to map back."""

    graph: ComputeGraph
    free: np.ndarray
    n_nodes: int
    base: np.ndarray          # full coordinates at lam = 0, flattened
    direction: np.ndarray     # d(full coordinates)/d lam, flattened

    def full(self, x, lam=0.0):
        out = self.base + lam * self.direction
        out = out.reshape(-1, 3).copy()
        out[self.free] = np.asarray(x).reshape(-1, 3)
        return out

    def restrict(self, vec):
        return np.asarray(vec).reshape(-1, 3)[self.free].ravel()

    def x_of(self, coords):
        return np.asarray(coords, float).reshape(-1, 3)[self.free].ravel()


def _selector(free, n_nodes):
    """Sparse ``S`` with ``full = S @ x`` for the free-node coordinates."""
    cols = np.arange(free.size * 3)
    rows = (free[:, None] * 3 + np.arange(3)).ravel()
    return sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(n_nodes * 3, free.size * 3))


def free_nodes(mesh: TetMesh, config: ProblemConfig):
    fixed = np.zeros(mesh.n_nodes, bool)
    fixed[config.fixed_nodes] = True
    fixed[config.handle_nodes()] = True
    return np.nonzero(~fixed)[0]


def assemble_force_graph(mesh: TetMesh, config: ProblemConfig, kind=None,
                         base=None, target=None) -> ForceProblem:
    """Graph of the internal force on free nodes.

    ``forward``/``deform``: ``mesh`` is the rest shape and the unknowns are
    deformed coordinates; force is ``P(F)`` against rest normals.
    ``inverse``: ``mesh`` is the deformed shape and the unknowns are rest
    coordinates; force is the Cauchy stress against deformed normals.
    ``base``/``target`` give full coordinates of constrained nodes at
    ``lam = 0`` and ``lam = 1`` (defaults: the mesh nodes, not moving).
    """
    kind = kind or config.kind
    free = free_nodes(mesh, config)
    n = mesh.n_nodes
    S = _selector(free, n)
    base = mesh.nodes.ravel().copy() if base is None else np.asarray(base, float).ravel().copy()
    direction = np.zeros(n * 3) if target is None else np.asarray(target, float).ravel() - base
    base.reshape(-1, 3)[free] = 0.0
    direction.reshape(-1, 3)[free] = 0.0
    A = shape_matrix_map(mesh.tets, n)
    lam_vec = A @ direction if np.any(direction) else None
    amap = SparseAffineMap(A @ S, (mesh.n_tets, 3, 3), lam_vec, A @ base)
    g = ComputeGraph(free.size * 3)
    if kind == "inverse":
        Ds = g.constant(mesh.Dm)
        Dm = g.input(amap)
        F = Ds @ g.apply("inv", Dm)
        stress = build_cauchy(config.material, F)
    else:
        Ds = g.input(amap)
        F = Ds @ g.constant(mesh.Dm_inv)
        stress = build_pk1(config.material, F)
    B = S.T @ force_map(mesh.tets, mesh.normals, n)
    g.add_output(stress, B)
    base_full = base.copy()
    return ForceProblem(g, free, n, base_full, direction)


@dataclass
class FemResult:
    coords: np.ndarray
    traces: list
    residual: float
    wall_time: float
    min_det: float = math.inf

    @property
    def iterations(self):
        return sum(t.iterations for _, t in self.traces)

    def report(self):
        steps = []
        for label, tr in self.traces:
            steps += [dict(phase=label, **s.to_dict()) for s in tr.steps]
        return {"iterations": self.iterations, "wall_time": self.wall_time,
                "residual": self.residual, "min_det": self.min_det, "steps": steps}


class _DetGuard:
    """Continuation hook rejecting states with inverted tets; tracks min det(F)."""

    def __init__(self, mesh, problem, inverse=False):
        self.mesh, self.problem, self.inverse = mesh, problem, inverse
        self.min_det = math.inf
        self.last_lam = None

    def det(self, coords):
        """``det F`` per tet; the inverse problem has the rest shape as unknown."""
        cur = np.linalg.det(shape_matrices(np.asarray(coords).reshape(-1, 3), self.mesh.tets))
        ref = np.linalg.det(self.mesh.Dm)
        return ref / cur if self.inverse else cur / ref

    def __call__(self, x, lam):
        d = self.det(self.problem.full(x, lam)).min()
        self.last_lam = lam
        if d > 0:
            self.min_det = min(self.min_det, d)
            return True
        return False


def _step_hook(on_step, label, problem):
    if on_step is None:
        return None
    return lambda rec: on_step(label, problem.full(rec.x, rec.lam), rec)


def _equilibrium(mesh, config, kind, on_step):
    config.validate(mesh)
    t0 = time.perf_counter()
    problem = assemble_force_graph(mesh, config, kind)
    f_ext = problem.restrict(external_force(mesh, config))
    guard = _DetGuard(mesh, problem, inverse=(kind == "inverse"))
    opts = config.solver.options(accept=guard, on_step=_step_hook(on_step, kind, problem))
    x0 = problem.x_of(mesh.nodes)
    x, trace = equational_continuation(problem.graph, f_ext, x0, config.solver.eps_res, opts)
    res = rms(problem.graph.evaluate(x) + f_ext)
    return FemResult(problem.full(x), [(kind, trace)], res, time.perf_counter() - t0, guard.min_det)


def solve_forward(mesh: TetMesh, config: ProblemConfig, on_step: Callable | None = None) -> FemResult:
    """Deformed shape in equilibrium with the external force; ``mesh`` is the rest shape."""
    return _equilibrium(mesh, config, "forward", on_step)


def solve_inverse(mesh: TetMesh, config: ProblemConfig, on_step: Callable | None = None) -> FemResult:
    """Rest shape that deforms into ``mesh`` under the external force."""
    return _equilibrium(mesh, config, "inverse", on_step)


def handle_waypoints(mesh: TetMesh, config: ProblemConfig):
    """Full constrained-node coordinates at the start and at each waypoint."""
    start = mesh.nodes.copy()
    counts = [h.waypoints.shape[0] for h in config.handles]
    k = max(counts) if counts else 0
    frames = [start]
    for w in range(k):
        cur = frames[-1].copy()
        for h in config.handles:
            if h.waypoints.shape[0]:
                cur[h.nodes] = h.waypoints[w]
        frames.append(cur)
    return frames


def solve_deform(mesh: TetMesh, config: ProblemConfig, on_step: Callable | None = None) -> FemResult:
    """Move handles along their piecewise-linear paths, then refine the equilibrium."""
    config.validate(mesh)
    t0 = time.perf_counter()
    frames = handle_waypoints(mesh, config)
    traces = []
    x = None
    min_det = math.inf
    first = True
    for seg, (a, b) in enumerate(zip(frames[:-1], frames[1:])):
        if np.array_equal(a, b):
            continue
        problem = assemble_force_graph(mesh, config, "deform", base=a, target=b)
        if x is None:
            x = problem.x_of(mesh.nodes)
        guard = _DetGuard(mesh, problem)
        label = f"segment {seg}"
        opts = config.solver.options(accept=guard, keep_approximants=True,
                                     start_tol=None if first else math.inf,
                                     on_step=_step_hook(on_step, label, problem))
        try:
            x, trace = continuation(problem.graph, x, 0.0, 1.0, opts)
        except NoProgressError as exc:
            lam = guard.last_lam
            raise InvertedElementError(f"{label}: {exc}", lam=lam, segment=seg,
                                       trace=exc.trace) from None
        traces.append((label, trace))
        min_det = min(min_det, guard.min_det)
        first = False
    final = frames[-1]
    problem = assemble_force_graph(mesh, config, "deform", base=final)
    if x is None:
        x = problem.x_of(mesh.nodes)
    guard = _DetGuard(mesh, problem)
    opts = config.solver.options(order=config.solver.refine_order, accept=guard,
                                 on_step=_step_hook(on_step, "refine", problem))
    x, trace = equational_continuation(problem.graph, np.zeros(problem.graph.n), x,
                                       config.solver.eps_res, opts)
    traces.append(("refine", trace))
    min_det = min(min_det, guard.min_det)
    res = rms(problem.graph.evaluate(x))
    coords = problem.full(x)
    min_det = min(min_det, float(np.linalg.det(mesh.deformation_gradients(coords)).min()))
    return FemResult(coords, traces, res, time.perf_counter() - t0, min_det)


def solve(mesh: TetMesh, config: ProblemConfig, on_step=None) -> FemResult:
    return {"forward": solve_forward, "inverse": solve_inverse,
            "deform": solve_deform}[config.kind](mesh, config, on_step)
