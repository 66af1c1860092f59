"""Command-line front end.

Exit codes: 0 success, 2 input error (bad files, config fields, flags),
3 solver failure.  Every run prints its JSON report on stdout.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, MeshError, SolverError
from .fem.mesh import box_mesh
from .fem.problems import PROBLEM_KINDS, solve
from .tensor import set_num_threads
from .toy import solve_toy

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dumps(report) -> str:
    return json.dumps(_clean(report), indent=2, allow_nan=False)


def _trace_report(trace, phase=None):
    if trace is None:
        return []
    return [dict(({"phase": phase} if phase else {}), **s.to_dict()) for s in trace.steps]


def _add_solver_flags(p):
    p.add_argument("--order", type=int, help="truncation order N (>= 3)")
    p.add_argument("--eps-rov", type=float, help="range-of-validity tolerance")
    p.add_argument("--eps-res", type=float, help="final residual tolerance")
    p.add_argument("--no-pade", action="store_true", help="use Taylor steps only")
    p.add_argument("--threads", type=int, default=1, help="workers for batched linear algebra")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anmsolve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every continuation step")
    sub = parser.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="circle-ellipse intersection smoke problem")
    _add_solver_flags(toy)
    toy.add_argument("--equational", action="store_true",
                     help="redefine the homotopy each step to drive the residual down")
    toy.set_defaults(func=cmd_toy)

    sol = sub.add_parser("solve", help="forward, inverse or handle-controlled FEM problem")
    sol.add_argument("problem", choices=PROBLEM_KINDS)
    sol.add_argument("mesh", help="tetgen base path (with or without .node/.ele)")
    sol.add_argument("config", help="TOML problem config")
    sol.add_argument("out_dir")
    _add_solver_flags(sol)
    sol.add_argument("--dump-steps", action="store_true", help="write a VTK state per step")
    sol.add_argument("--force-file", help="n x 3 nodal forces replacing gravity")
    sol.set_defaults(func=cmd_solve)

    mk = sub.add_parser("make-mesh", help="write a structured box tet mesh")
    mk.add_argument("out", help="tetgen base path")
    mk.add_argument("--cells", type=int, nargs=3, default=(4, 4, 4))
    mk.add_argument("--size", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    mk.add_argument("--jitter", type=float, default=0.0, help="interior node jitter (cell fraction)")
    mk.add_argument("--seed", type=int, default=0)
    mk.set_defaults(func=cmd_make_mesh)
    return parser


def cmd_toy(args) -> int:
    kw = {}
    if args.order is not None:
        kw["order"] = args.order
    if args.eps_rov is not None:
        kw["eps_rov"] = args.eps_rov
    if args.eps_res is not None:
        kw["eps_res"] = args.eps_res
    try:
        result = solve_toy(use_pade=not args.no_pade, equational=args.equational, **kw)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(_dumps(result.report()))
    return EXIT_OK


def _overrides(args):
    kw = {}
    if args.order is not None:
        kw["order"] = args.order
    if args.eps_rov is not None:
        kw["eps_rov"] = args.eps_rov
    if args.eps_res is not None:
        kw["eps_res"] = args.eps_res
    if args.no_pade:
        kw["use_pade"] = False
    return kw


def cmd_solve(args) -> int:
    out = Path(args.out_dir)
    try:
        mesh = io.read_tetgen(args.mesh)
        mesh.validate()
        config = io.load_config(args.config, mesh, kind=args.problem)
        config = dataclasses.replace(
            config, solver=dataclasses.replace(config.solver, **_overrides(args)))
        if args.force_file:
            config = dataclasses.replace(config, force=io.read_coords(args.force_file, mesh.n_nodes))
        config.validate(mesh)
    except (OSError, ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out.mkdir(parents=True, exist_ok=True)
    on_step = None
    if args.dump_steps:
        counter = iter(range(1, 1 << 30))

        def on_step(label, coords, rec):
            i = next(counter)
            tag = label.replace(" ", "")
            io.write_vtk(out / "steps" / f"step_{i:04d}_{tag}.vtk", coords, mesh.tets,
                         title=f"{label} lam={rec.lam:.17g}")

    try:
        result = solve(mesh, config, on_step=on_step)
    except SolverError as exc:
        report = {"status": "failed", "error": type(exc).__name__, "message": str(exc),
                  "steps": _trace_report(exc.trace)}
        for key in ("segment", "lam"):
            if getattr(exc, key, None) is not None:
                report[key] = getattr(exc, key)
        text = _dumps(report)
        (out / "report.json").write_text(text + "\n")
        print(text)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    io.write_vtk(out / "final.vtk", result.coords, mesh.tets, title=f"{args.problem} result")
    io.write_coords(out / "final.txt", result.coords)
    report = dict(status="ok", problem=args.problem, **result.report())
    text = _dumps(report)
    (out / "report.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_make_mesh(args) -> int:
    try:
        mesh = box_mesh(args.cells, size=args.size, jitter=args.jitter, seed=args.seed)
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    node_path, ele_path = io.write_tetgen(mesh, args.out)
    print(_dumps({"nodes": mesh.n_nodes, "tets": mesh.n_tets,
                  "files": [str(node_path), str(ele_path)]}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_num_threads(args.threads if hasattr(args, "threads") else 1)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except SolverError as exc:
        print(_dumps({"status": "failed", "error": type(exc).__name__, "message": str(exc),
                      "steps": _trace_report(exc.trace)}))
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
