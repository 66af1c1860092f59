"""Ready-made problem setups used by the scripts, tests and CLI smoke runs."""
from __future__ import annotations

import dataclasses

import numpy as np

from .material import MaterialSpec
from .mesh import TetMesh, box_mesh
from .problems import (HandleSpec, ProblemConfig, SolverSettings, external_force, solve,
                       solve_forward, solve_inverse)

DEFAULT_MATERIALS = {
    "NC": MaterialSpec("NC", mu=1.0, lam=1.0),
    "NI": MaterialSpec("NI", mu=1.0, kappa=10.0),
    "ARAP": MaterialSpec("ARAP", mu=1.0),
}


def rotation(axis, angle):
    """Rotation matrix about a unit axis (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def bar_mesh(cells=(12, 2, 2), length=6.0, width=1.0):
    return box_mesh(cells, size=(length, width, width))


def cantilever_config(mesh: TetMesh, model="NC", gravity=0.2, solver=None) -> ProblemConfig:
    """Bar clamped at ``x = min`` and loaded by gravity along ``-z``."""
    x0 = mesh.nodes[:, 0].min()
    fixed = np.nonzero(np.isclose(mesh.nodes[:, 0], x0))[0]
    return ProblemConfig(kind="forward", material=DEFAULT_MATERIALS[model],
                         gravity=(0.0, 0.0, -gravity), fixed_nodes=fixed,
                         solver=solver or SolverSettings())


def twist_bend_config(mesh: TetMesh, model="ARAP", twist_segments=12, bend_angle=np.pi / 2,
                      bend_segments=3, solver=None) -> ProblemConfig:
    """Twist the ``x = max`` end a full turn about the bar axis, then bend the bar.

    Both end faces are handles.  The twist is split into ``twist_segments``
    straight-line moves because a single linear 360 degree move is the zero
    move.  The bend places both end faces on a circular arc of the bar's
    length with total angle ``bend_angle``.
    """
    p = mesh.nodes
    lo, hi = p.min(axis=0), p.max(axis=0)
    length = hi[0] - lo[0]
    yc, zc = 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])
    left = np.nonzero(np.isclose(p[:, 0], lo[0]))[0]
    right = np.nonzero(np.isclose(p[:, 0], hi[0]))[0]
    c_left = np.array([lo[0], yc, zc])
    c_right = np.array([hi[0], yc, zc])
    wl, wr = [], []
    for i in range(1, twist_segments + 1):
        R = rotation((1, 0, 0), 2 * np.pi * i / twist_segments)
        wl.append(p[left].copy())
        wr.append(c_right + (p[right] - c_right) @ R.T)
    for i in range(1, bend_segments + 1):
        theta = bend_angle * i / bend_segments
        radius = length / theta
        arc_c = np.array([lo[0] + 0.5 * length, yc + radius, zc])
        for nodes, c_end, alpha, out in ((left, c_left, -theta / 2, wl),
                                         (right, c_right, theta / 2, wr)):
            pos = arc_c + radius * np.array([np.sin(alpha), -np.cos(alpha), 0.0])
            out.append(pos + (p[nodes] - c_end) @ rotation((0, 0, 1), alpha).T)
    handles = [HandleSpec(left, np.stack(wl)), HandleSpec(right, np.stack(wr))]
    return ProblemConfig(kind="deform", material=DEFAULT_MATERIALS[model], handles=handles,
                         solver=solver or SolverSettings())


def benchmark_suite(gravities=(0.2, 1.0), models=("NC", "NI", "ARAP"), twist=True):
    """Named ``(mesh, config)`` cases covering all three problem kinds.

    Inverse cases use the forward solution's deformed mesh as input, so they
    are produced lazily by :func:`run_case`.
    """
    bar = bar_mesh((8, 2, 2), 4.0)
    cases = []
    for model in models:
        for g in gravities:
            cases.append((f"forward-{model}-g{g}", bar, cantilever_config(bar, model, g)))
        cases.append((f"inverse-{model}-g{gravities[0]}", bar,
                      dataclasses.replace(cantilever_config(bar, model, gravities[0]), kind="inverse")))
        if twist:
            long_bar = bar_mesh()
            cases.append((f"twist-bend-{model}", long_bar, twist_bend_config(long_bar, model)))
    return cases


def run_case(mesh: TetMesh, config: ProblemConfig, on_step=None, **solver_overrides):
    """Solve one suite case; inverse cases first build their deformed target.

    ``on_step`` only sees the final solve (for inverse cases, not the forward
    solve that produces the target).
    """
    config = dataclasses.replace(config, solver=dataclasses.replace(config.solver, **solver_overrides))
    if config.kind != "inverse":
        return solve(mesh, config, on_step)
    fwd = solve_forward(mesh, dataclasses.replace(config, kind="forward"))
    target = TetMesh(fwd.coords, mesh.tets)
    force = external_force(mesh, config)
    return solve_inverse(target, dataclasses.replace(config, force=force), on_step)
