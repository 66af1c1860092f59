"""Mesh, state and problem-config files.

Meshes use the tetgen ``.node``/``.ele`` pair.  States are written as legacy
ASCII VTK unstructured grids plus a plain coordinate dump.  Problem configs
are TOML documents; every validation failure is reported as a
:class:`ConfigError` naming the offending field.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigError, MeshError
from .fem.material import MaterialSpec
from .fem.mesh import TetMesh
from .fem.problems import PROBLEM_KINDS, HandleSpec, ProblemConfig, SolverSettings
from .fem.scenarios import rotation

FLOAT_FMT = "%.17g"   # round-trips doubles exactly


def _data_lines(path: Path):
    """Yield ``(line_number, tokens)`` skipping blanks and ``#`` comments."""
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].split()
            if body:
                yield no, body


def _mesh_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".node", ".ele"):
        p = p.with_suffix("")
    return p.with_suffix(".node"), p.with_suffix(".ele")


def _header(lines, path, what):
    try:
        no, tok = next(lines)
    except StopIteration:
        raise MeshError(f"{path}: empty {what} file") from None
    try:
        return [int(t) for t in tok]
    except ValueError:
        raise MeshError(f"{path}:{no}: malformed {what} header {' '.join(tok)!r}") from None


def read_tetgen(path) -> TetMesh:
    """Read ``<base>.node`` and ``<base>.ele``; 0- or 1-based numbering is detected."""
    node_path, ele_path = _mesh_paths(path)
    lines = _data_lines(node_path)
    head = _header(lines, node_path, "node")
    count, dim = head[0], head[1] if len(head) > 1 else 3
    if dim != 3:
        raise MeshError(f"{node_path}:1: expected dimension 3, got {dim}")
    ids, nodes = [], []
    for no, tok in lines:
        if len(ids) == count:
            raise MeshError(f"{node_path}:{no}: more node lines than the header count {count}")
        try:
            ids.append(int(tok[0]))
            nodes.append([float(t) for t in tok[1:4]])
        except (ValueError, IndexError):
            raise MeshError(f"{node_path}:{no}: malformed node line") from None
        if len(nodes[-1]) != 3:
            raise MeshError(f"{node_path}:{no}: node needs three coordinates")
    if len(ids) != count:
        raise MeshError(f"{node_path}: header promises {count} nodes, found {len(ids)}")
    base = ids[0] if ids else 0
    if base not in (0, 1) or ids != list(range(base, base + count)):
        raise MeshError(f"{node_path}: node indices must be consecutive from 0 or 1")

    lines = _data_lines(ele_path)
    head = _header(lines, ele_path, "element")
    t_count, per = head[0], head[1] if len(head) > 1 else 4
    if per != 4:
        raise MeshError(f"{ele_path}:1: only 4-node tetrahedra are supported, got {per}")
    tets = []
    for no, tok in lines:
        try:
            tets.append([int(t) - base for t in tok[1:5]])
        except ValueError:
            raise MeshError(f"{ele_path}:{no}: malformed element line") from None
        if len(tets[-1]) != 4:
            raise MeshError(f"{ele_path}:{no}: element needs four node indices")
    if len(tets) != t_count:
        raise MeshError(f"{ele_path}: header promises {t_count} elements, found {len(tets)}")
    mesh = TetMesh(np.array(nodes, dtype=np.float64).reshape(-1, 3),
                   np.array(tets, dtype=np.int64).reshape(-1, 4))
    return mesh


def write_tetgen(mesh: TetMesh, path, base: int = 1) -> tuple[Path, Path]:
    node_path, ele_path = _mesh_paths(path)
    node_path.parent.mkdir(parents=True, exist_ok=True)
    with open(node_path, "w") as fh:
        fh.write(f"{mesh.n_nodes} 3 0 0\n")
        for i, p in enumerate(mesh.nodes):
            fh.write(f"{i + base} " + " ".join(FLOAT_FMT % v for v in p) + "\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{mesh.n_tets} 4 0\n")
        for i, t in enumerate(mesh.tets):
            fh.write(f"{i + base} " + " ".join(str(int(v) + base) for v in t) + "\n")
    return node_path, ele_path


def write_vtk(path, coords, tets, title="anmsolve state") -> Path:
    """Legacy ASCII VTK unstructured grid of tetrahedra (cell type 10)."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    tets = np.asarray(tets, dtype=np.int64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {len(coords)} double"]
    out += [" ".join(FLOAT_FMT % v for v in p) for p in coords]
    out.append(f"CELLS {len(tets)} {5 * len(tets)}")
    out += ["4 " + " ".join(str(v) for v in t) for t in tets]
    out.append(f"CELL_TYPES {len(tets)}")
    out += ["10"] * len(tets)
    path.write_text("\n".join(out) + "\n")
    return path


def read_vtk_points(path) -> np.ndarray:
    """Point coordinates of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    for i, line in enumerate(lines):
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            return np.array([[float(v) for v in l.split()] for l in lines[i + 1:i + 1 + n]])
    raise MeshError(f"{path}: no POINTS section")


def write_coords(path, coords) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(coords).reshape(-1, 3), fmt=FLOAT_FMT)
    return path


def read_coords(path, n_nodes=None) -> np.ndarray:
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if arr.shape[1] != 3 or (n_nodes is not None and arr.shape[0] != n_nodes):
        raise ConfigError(f"{path}: expected {n_nodes or 'n'} x 3 values, got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# problem configs

_SOLVER_KEYS = {"order": int, "eps_rov": float, "eps_res": float, "max_iter": int,
                "use_pade": bool, "refine_order": int}
_MATERIAL_KEYS = ("model", "mu", "lam", "kappa", "density")


def _vec3(value, where):
    try:
        v = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected three numbers") from None
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ConfigError(f"{where}: expected three finite numbers, got {value!r}")
    return v


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _select_nodes(table, mesh: TetMesh, where):
    """Union of an explicit ``nodes`` list and a ``box = {lo, hi}`` selection."""
    _check_keys(table, ("nodes", "box", "waypoints"), where)
    idx = []
    if "nodes" in table:
        try:
            nodes = np.asarray(table["nodes"], dtype=np.int64).ravel()
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.nodes: expected a list of integers") from None
        if nodes.size and (nodes.min() < 0 or nodes.max() >= mesh.n_nodes):
            raise ConfigError(f"{where}.nodes: index out of range 0..{mesh.n_nodes - 1}")
        idx.append(nodes)
    if "box" in table:
        box = table["box"]
        _check_keys(box, ("lo", "hi"), f"{where}.box")
        if "lo" not in box or "hi" not in box:
            raise ConfigError(f"{where}.box: needs both lo and hi")
        idx.append(mesh.nodes_in_box(_vec3(box["lo"], f"{where}.box.lo"),
                                     _vec3(box["hi"], f"{where}.box.hi")))
    if not idx:
        raise ConfigError(f"{where}: needs nodes or box")
    out = np.unique(np.concatenate(idx))
    if out.size == 0:
        raise ConfigError(f"{where}: selection is empty")
    return out


def _waypoint(spec, rest, where):
    """Absolute handle positions for one waypoint, applied to the rest positions."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    _check_keys(spec, ("positions", "rotate", "translate"), where)
    if "positions" in spec:
        if len(spec) > 1:
            raise ConfigError(f"{where}: positions cannot be combined with transforms")
        try:
            pos = np.asarray(spec["positions"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.positions: expected rows of three numbers") from None
        if pos.shape != rest.shape:
            raise ConfigError(f"{where}.positions: expected shape {rest.shape}, got {pos.shape}")
        return pos
    out = rest.copy()
    if "rotate" in spec:
        rot = spec["rotate"]
        _check_keys(rot, ("axis", "angle_deg", "center"), f"{where}.rotate")
        axis = _vec3(rot.get("axis"), f"{where}.rotate.axis")
        if not np.linalg.norm(axis) > 0:
            raise ConfigError(f"{where}.rotate.axis: must be nonzero")
        try:
            angle = np.deg2rad(float(rot["angle_deg"]))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{where}.rotate.angle_deg: expected a number") from None
        center = _vec3(rot.get("center", rest.mean(axis=0)), f"{where}.rotate.center")
        out = center + (out - center) @ rotation(axis, angle).T
    if "translate" in spec:
        out = out + _vec3(spec["translate"], f"{where}.translate")
    return out


def parse_config(doc: dict, mesh: TetMesh, kind: str | None = None) -> ProblemConfig:
    """Build a :class:`ProblemConfig` from a parsed TOML document."""
    _check_keys(doc, ("kind", "gravity", "material", "fixed", "handles", "solver"), "config")
    kind = kind or doc.get("kind", "forward")
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"kind: expected one of {PROBLEM_KINDS}, got {kind!r}")

    mat = doc.get("material", {})
    _check_keys(mat, _MATERIAL_KEYS, "material")
    try:
        material = MaterialSpec(**mat)
    except TypeError as exc:
        raise ConfigError(f"material: {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"material: {exc}") from None

    gravity = _vec3(doc.get("gravity", [0.0, 0.0, 0.0]), "gravity")

    fixed = np.zeros(0, dtype=np.int64)
    if "fixed" in doc:
        fixed = _select_nodes(doc["fixed"], mesh, "fixed")

    handles = []
    raw = doc.get("handles", [])
    if not isinstance(raw, list):
        raise ConfigError("handles: expected an array of tables ([[handles]])")
    for i, h in enumerate(raw):
        where = f"handles[{i}]"
        nodes = _select_nodes(h, mesh, where)
        rest = mesh.nodes[nodes]
        wps = h.get("waypoints", [])
        if not isinstance(wps, list):
            raise ConfigError(f"{where}.waypoints: expected an array of tables")
        frames = [_waypoint(w, rest, f"{where}.waypoints[{j}]") for j, w in enumerate(wps)]
        handles.append(HandleSpec(nodes, np.stack(frames) if frames
                                  else np.zeros((0, len(nodes), 3))))

    sol = doc.get("solver", {})
    _check_keys(sol, _SOLVER_KEYS, "solver")
    kw = {}
    for key, typ in _SOLVER_KEYS.items():
        if key in sol:
            val = sol[key]
            if typ is bool and not isinstance(val, bool):
                raise ConfigError(f"solver.{key}: expected true or false")
            if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
                raise ConfigError(f"solver.{key}: expected an integer")
            if typ is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
                raise ConfigError(f"solver.{key}: expected a number")
            kw[key] = typ(val)
    try:
        solver = SolverSettings(**kw)
    except ConfigError as exc:
        raise ConfigError(f"solver: {exc}") from None

    config = ProblemConfig(kind=kind, material=material, gravity=gravity, fixed_nodes=fixed,
                           handles=handles, solver=solver)
    config.validate(mesh)
    return config


def load_config(path, mesh: TetMesh, kind: str | None = None) -> ProblemConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        # the message already carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return parse_config(doc, mesh, kind)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
