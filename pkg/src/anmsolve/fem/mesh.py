"""Tetrahedral meshes: geometry, shape matrices and structured test meshes."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.sparse as sp

from ..errors import MeshError

DEGENERATE_TOL = 1e-12


def shape_matrices(coords, tets):
    """``D[t] = [x1 - x0, x2 - x0, x3 - x0]`` as columns, shape ``(t, 3, 3)``."""
    p = coords[tets]
    return np.swapaxes(p[:, 1:] - p[:, :1], 1, 2)


def signed_volumes(coords, tets):
    return np.linalg.det(shape_matrices(coords, tets)) / 6.0


def node_normals(dm_inv, volumes):
    """Area-weighted normals ``n[t, i]`` so that node forces are ``P @ n[t, i]``.

    For node ``j = 1..3`` this is ``-V * Dm^{-T} e_j``; node 0 gets minus the
    sum, so every tet's normals add up to zero.
    """
    n = np.empty((dm_inv.shape[0], 4, 3))
    n[:, 1:] = -volumes[:, None, None] * dm_inv
    n[:, 0] = -n[:, 1:].sum(axis=1)
    return n


@dataclass
class TetMesh:
    nodes: np.ndarray
    tets: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise MeshError(f"nodes must be n x 3, got {self.nodes.shape}")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError(f"tets must be t x 4, got {self.tets.shape}")
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= len(self.nodes)):
            raise MeshError("tet references a node index out of range")

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_tets(self):
        return self.tets.shape[0]

    @property
    def scale(self):
        return float(np.linalg.norm(self.nodes.max(axis=0) - self.nodes.min(axis=0)))

    def bbox_diagonal(self):
        return self.scale

    @property
    def Dm(self):
        if "Dm" not in self._cache:
            self._cache["Dm"] = shape_matrices(self.nodes, self.tets)
        return self._cache["Dm"]

    @property
    def volumes(self):
        return np.linalg.det(self.Dm) / 6.0

    @property
    def Dm_inv(self):
        if "Dm_inv" not in self._cache:
            self.validate()
            self._cache["Dm_inv"] = np.linalg.inv(self.Dm)
        return self._cache["Dm_inv"]

    @property
    def normals(self):
        return node_normals(self.Dm_inv, self.volumes)

    def validate(self):
        """Raise :class:`MeshError` for inverted or degenerate rest tets."""
        det = np.linalg.det(self.Dm)
        tol = DEGENERATE_TOL * max(self.scale, 1e-300) ** 3
        bad = np.nonzero(det <= tol)[0]
        if bad.size:
            raise MeshError(f"{bad.size} tets have non-positive or tiny volume (first: {bad[0]})")

    def deformation_gradients(self, coords):
        return shape_matrices(np.asarray(coords, float).reshape(-1, 3), self.tets) @ self.Dm_inv

    def lumped_mass(self, density=1.0):
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.tets.ravel(), np.repeat(density * self.volumes / 4.0, 4))
        return m

    def boundary_faces(self):
        faces = np.concatenate([self.tets[:, [1, 2, 3]], self.tets[:, [0, 3, 2]],
                                self.tets[:, [0, 1, 3]], self.tets[:, [0, 2, 1]]])
        key = np.sort(faces, axis=1)
        _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
        return faces[idx[counts == 1]]

    def nodes_in_box(self, lo, hi, tol=1e-9):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        inside = np.all((self.nodes >= lo - tol) & (self.nodes <= hi + tol), axis=1)
        return np.nonzero(inside)[0]


def shape_matrix_map(tets, n_nodes):
    """Sparse ``A`` with ``vec(D_s) = A @ coords.ravel()`` (row ``t*9 + r*3 + c``)."""
    t = tets.shape[0]
    rows, cols, vals = [], [], []
    ti = np.arange(t)
    for r in range(3):
        for c in range(3):
            row = ti * 9 + r * 3 + c
            rows += [row, row]
            cols += [tets[:, c + 1] * 3 + r, tets[:, 0] * 3 + r]
            vals += [np.ones(t), -np.ones(t)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(t * 9, n_nodes * 3))


def force_map(tets, normals, n_nodes):
    """Sparse ``B`` with ``f = B @ vec(S)`` where ``f_i = sum_t S_t n[t, i]``."""
    t = tets.shape[0]
    rows, cols, vals = [], [], []
    ti = np.arange(t)
    for i in range(4):
        for r in range(3):
            for c in range(3):
                rows.append(tets[:, i] * 3 + r)
                cols.append(ti * 9 + r * 3 + c)
                vals.append(normals[:, i, c])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n_nodes * 3, t * 9))


_CORNER = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)])


def _kuhn_tets():
    """Six tets along the 0-7 diagonal of the unit cube (corner index = i + 2j + 4k)."""
    out = []
    for perm in permutations(range(3)):
        path = [0]
        acc = 0
        for axis in perm:
            acc |= 1 << axis
            path.append(acc)
        out.append(path)
    return np.array(out)


def box_mesh(cells=(2, 2, 2), size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
             jitter=0.0, seed=None) -> TetMesh:
    """Structured box split into 6 tets per cell; optional interior node jitter."""
    nx, ny, nz = (int(c) for c in cells)
    if min(nx, ny, nz) < 1:
        raise MeshError("need at least one cell per axis")
    xs = [np.linspace(o, o + s, n + 1) for o, s, n in zip(origin, size, (nx, ny, nz))]
    gx, gy, gz = np.meshgrid(*xs, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    local = _kuhn_tets()
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [nid(i + a, j + b, k + c) for a, b, c in _CORNER]
                tets.extend([[corner[v] for v in tet] for tet in local])
    tets = np.array(tets)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        h = np.array(size) / np.array([nx, ny, nz])
        interior = np.all((nodes > np.array(origin) + 1e-9)
                          & (nodes < np.array(origin) + np.array(size) - 1e-9), axis=1)
        nodes[interior] += jitter * h * rng.uniform(-1, 1, size=(interior.sum(), 3))
    vol = signed_volumes(nodes, tets)
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    mesh = TetMesh(nodes, tets)
    mesh.validate()
    return mesh
