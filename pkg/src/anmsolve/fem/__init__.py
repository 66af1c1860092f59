"""Tetrahedral finite elements on top of the ANM solver."""
from .material import MODELS, MaterialSpec, build_cauchy, build_pk1
from .mesh import TetMesh, box_mesh, force_map, shape_matrix_map
from .problems import (FemResult, ForceProblem, HandleSpec, ProblemConfig, SolverSettings,
                       assemble_force_graph, external_force, solve, solve_deform,
                       solve_forward, solve_inverse)


def build_deformation_gradient(mesh: TetMesh, config: ProblemConfig | None = None):
    """Graph computing ``F = D_s D_m^{-1}``; returns ``(graph, F, free)``.

    The unknowns are the free-node coordinates and ``F`` is the batched
    deformation-gradient vertex.  The graph has no output, so read ``F``
    with :meth:`ComputeGraph.vertex_values`.
    """
    from ..graph import ComputeGraph, SparseAffineMap
    from .problems import _selector, free_nodes

    config = config or ProblemConfig()
    free = free_nodes(mesh, config)
    S = _selector(free, mesh.n_nodes)
    base = mesh.nodes.ravel().copy()
    base.reshape(-1, 3)[free] = 0.0
    A = shape_matrix_map(mesh.tets, mesh.n_nodes)
    g = ComputeGraph(free.size * 3)
    Ds = g.input(SparseAffineMap(A @ S, (mesh.n_tets, 3, 3), None, A @ base))
    F = Ds @ g.constant(mesh.Dm_inv)
    return g, F, free
