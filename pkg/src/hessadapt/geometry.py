"""Triangular mesh kernel: storage, affine element maps, vertex patches and I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Equilateral reference triangle of unit area, centred at its barycentre.
_REF_SIDE = 2.0 / 3.0**0.25
_REF_HEIGHT = 3.0**0.25
REFERENCE_TRIANGLE = np.array(
    [
        [-_REF_SIDE / 2.0, -_REF_HEIGHT / 3.0],
        [_REF_SIDE / 2.0, -_REF_HEIGHT / 3.0],
        [0.0, 2.0 * _REF_HEIGHT / 3.0],
    ]
)
_REF_EDGES = np.column_stack(
    [REFERENCE_TRIANGLE[1] - REFERENCE_TRIANGLE[0], REFERENCE_TRIANGLE[2] - REFERENCE_TRIANGLE[0]]
)
_REF_EDGES_INV = np.linalg.inv(_REF_EDGES)

DEGENERATE_AREA_FLOOR = 1e-14


class MeshError(ValueError):
    """Base class for invalid mesh input."""


class MeshParseError(MeshError):
    """Raised when a mesh file is malformed."""


class MeshTopologyError(MeshError):
    """Raised on non-manifold edges, inverted or degenerate elements."""


@dataclass(frozen=True)
class AffineMap:
    """``F_K(xhat) = jacobian @ xhat + translation`` from the reference triangle onto ``K``."""

    jacobian: np.ndarray
    translation: np.ndarray

    def __call__(self, xhat):
        xhat = np.asarray(xhat, dtype=float)
        return xhat @ self.jacobian.T + self.translation

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))


def signed_areas(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = points[triangles[:, 0]]
    e1 = points[triangles[:, 1]] - p0
    e2 = points[triangles[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


class Mesh:
    """Immutable conforming triangulation of a polygonal domain.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like, shape (nt, 3)
        Vertex indices. Clockwise triangles are reordered counterclockwise.
    markers : array_like, optional
        Integer label per vertex, carried through I/O untouched.

    Boundary edges are derived from the topology (edges with a single
    adjacent triangle); boundary vertices are their endpoints.
    """

    def __init__(self, vertices, triangles, markers=None):
        vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        nv = len(vertices)
        if not np.all(np.isfinite(vertices)):
            raise MeshParseError("non-finite vertex coordinates")
        if len(triangles) == 0:
            raise MeshTopologyError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= nv:
            raise MeshTopologyError("triangle vertex index out of range")
        t = triangles
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MeshTopologyError("triangle with repeated vertex")

        area = signed_areas(vertices, triangles)
        cw = area < 0
        if np.any(cw):
            triangles = triangles.copy()
            triangles[cw] = triangles[cw][:, [0, 2, 1]]
            area = np.abs(area)
        total = float(area.sum())
        if np.any(area <= DEGENERATE_AREA_FLOOR * total):
            k = int(np.argmin(area))
            raise MeshTopologyError(f"degenerate element {k} (area {area[k]:.3e})")

        self.vertices = vertices
        self.triangles = triangles
        self.areas = area
        self.markers = (
            np.zeros(nv, dtype=np.int64) if markers is None else np.asarray(markers, dtype=np.int64)
        )
        for arr in (self.vertices, self.triangles, self.areas, self.markers):
            arr.flags.writeable = False
        self._build_edges()

    def _build_edges(self):
        nv = self.n_vertices
        local = self.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        lo = local.min(axis=1)
        hi = local.max(axis=1)
        keys = lo * nv + hi
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            e = uniq[np.argmax(counts)]
            raise MeshTopologyError(f"non-manifold edge ({e // nv}, {e % nv}) shared by >2 triangles")
        # A manifold interior edge must be traversed in opposite directions.
        directed = local[:, 0] * nv + local[:, 1]
        if len(np.unique(directed)) != len(directed):
            raise MeshTopologyError("inconsistently oriented or overlapping triangles")
        self.edges = np.column_stack([uniq // nv, uniq % nv])
        self.edge_of_local = inverse.reshape(-1, 3)
        self._edge_counts = counts
        bnd = counts == 1
        self.boundary_edges = self.edges[bnd]
        self.boundary_vertices = frozenset(np.unique(self.boundary_edges).tolist())
        self.is_boundary_vertex = np.zeros(nv, dtype=bool)
        self.is_boundary_vertex[list(self.boundary_vertices)] = True
        for arr in (self.edges, self.edge_of_local, self.boundary_edges, self.is_boundary_vertex):
            arr.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def domain_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(ne, 2) triangle indices per edge, -1 where a boundary edge has no second side."""
        out = np.full((len(self.edges), 2), -1, dtype=np.int64)
        flat = self.edge_of_local.ravel()
        tri = np.repeat(np.arange(self.n_elements), 3)
        order = np.argsort(flat, kind="stable")
        fs, ts = flat[order], tri[order]
        first = np.r_[True, fs[1:] != fs[:-1]]
        out[fs[first], 0] = ts[first]
        out[fs[~first], 1] = ts[~first]
        return out

    @cached_property
    def _vertex_neighbors_csr(self):
        nv = self.n_vertices
        both = np.concatenate([self.edges, self.edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        ptr = np.searchsorted(both[:, 0], np.arange(nv + 1))
        return ptr, both[:, 1]

    @cached_property
    def _vertex_triangles_csr(self):
        nv = self.n_vertices
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        ptr = np.searchsorted(flat[order], np.arange(nv + 1))
        return ptr, order // 3

    def neighbors(self, i: int) -> np.ndarray:
        """First-ring neighbours of vertex ``i`` in ascending index order."""
        ptr, idx = self._vertex_neighbors_csr
        return idx[ptr[i] : ptr[i + 1]]

    def vertex_triangles(self, i: int) -> np.ndarray:
        ptr, idx = self._vertex_triangles_csr
        return idx[ptr[i] : ptr[i + 1]]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nt, 2, 2) Jacobians of the affine maps from the reference triangle."""
        p = self.vertices[self.triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return edges @ _REF_EDGES_INV

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the three P1 hat functions per element."""
        p = self.vertices[self.triangles]
        # grad phi_i = rot(p_{i+2} - p_{i+1}) / (2|K|), rot(a, b) = (-b, a)
        d = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        g = np.stack([-d[..., 1], d[..., 0]], axis=-1)
        return g / (2.0 * self.areas)[:, None, None]

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_elements={self.n_elements})"


def affine_map(mesh: Mesh, k: int) -> AffineMap:
    """Affine map of element ``k`` from the unit-area equilateral reference triangle."""
    if not 0 <= k < mesh.n_elements:
        raise IndexError(f"element index {k} out of range")
    if mesh.areas[k] <= DEGENERATE_AREA_FLOOR * mesh.domain_area:
        raise MeshTopologyError(f"degenerate element {k}")
    jac = np.array(mesh.jacobians[k])
    p0 = mesh.vertices[mesh.triangles[k, 0]]
    return AffineMap(jacobian=jac, translation=p0 - jac @ REFERENCE_TRIANGLE[0])


def vertex_patch(mesh: Mesh, i: int, min_size: int) -> list[int]:
    """Vertices around ``i`` (excluding ``i``), at least ``min_size`` of them if the mesh allows.

    The first ring is always returned whole. Further rings are appended one
    vertex at a time in ascending index order until ``min_size`` is reached,
    so a patch for a smaller ``min_size`` is always a prefix of a larger one.
    """
    if not 0 <= i < mesh.n_vertices:
        raise IndexError(f"vertex index {i} out of range")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    ring = sorted(mesh.neighbors(i).tolist())
    if not ring:
        raise MeshTopologyError(f"vertex {i} is disconnected")
    patch = list(ring)
    seen = set(ring)
    seen.add(i)
    while len(patch) < min_size:
        nxt = set()
        for v in ring:
            nxt.update(mesh.neighbors(v).tolist())
        nxt -= seen
        if not nxt:
            break
        ring = sorted(nxt)
        for v in ring:
            if len(patch) >= min_size:
                break
            patch.append(v)
        seen.update(ring)
    return patch


def structured_mesh(nx: int, ny: int | None = None, bounds=(0.0, 1.0, 0.0, 1.0), diagonal="right"):
    """Uniform ``nx`` by ``ny`` grid of squares, each cut into two triangles.

    ``diagonal`` is ``"right"`` (all cuts the same way), ``"alternate"``
    (criss-cross pattern) or an array of booleans per cell.
    """
    ny = nx if ny is None else ny
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    a = (j * (nx + 1) + i).ravel()
    b, c, d = a + 1, a + nx + 2, a + nx + 1
    if isinstance(diagonal, str):
        flip = ((i + j) % 2 == 1).ravel() if diagonal == "alternate" else np.zeros(a.shape, bool)
    else:
        flip = np.asarray(diagonal, dtype=bool).ravel()
    t1 = np.where(flip[:, None], np.column_stack([a, b, d]), np.column_stack([a, b, c]))
    t2 = np.where(flip[:, None], np.column_stack([b, c, d]), np.column_stack([a, c, d]))
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = t1
    tris[1::2] = t2
    mesh = Mesh(pts, tris)
    markers = mesh.is_boundary_vertex.astype(np.int64)
    return Mesh(pts, tris, markers=markers)


def load_mesh(path: str | os.PathLike) -> Mesh:
    """Read a mesh in the ``NV NT NB`` text format (see ``write_mesh``)."""
    with open(path) as fh:
        raw = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        nv, nt, nb = (int(v) for v in raw[0])
        body = raw[1:]
        if len(body) != nv + nt + nb:
            raise MeshParseError(f"expected {nv + nt + nb} data lines, found {len(body)}")
        vrows = body[:nv]
        if any(len(r) != 3 for r in vrows):
            raise MeshParseError("vertex lines must read 'x y marker'")
        verts = np.array([[float(r[0]), float(r[1])] for r in vrows]).reshape(-1, 2)
        markers = np.array([int(r[2]) for r in vrows], dtype=np.int64)
        trows = body[nv : nv + nt]
        if any(len(r) != 3 for r in trows):
            raise MeshParseError("triangle lines must read 'i j k'")
        tris = np.array(trows, dtype=np.int64).reshape(-1, 3)
        brows = body[nv + nt :]
        if any(len(r) != 2 for r in brows):
            raise MeshParseError("boundary-edge lines must read 'i j'")
        bedges = np.array(brows, dtype=np.int64).reshape(-1, 2)
    except MeshParseError:
        raise
    except (ValueError, IndexError) as exc:
        raise MeshParseError(f"malformed mesh file {path}: {exc}") from exc

    mesh = Mesh(verts, tris, markers=markers)
    if nb:
        given = {tuple(sorted(e)) for e in bedges.tolist()}
        derived = {tuple(e) for e in mesh.boundary_edges.tolist()}
        if given != derived:
            raise MeshTopologyError("listed boundary edges do not match single-sided edges")
    return mesh


def write_mesh(mesh: Mesh, path: str | os.PathLike) -> None:
    """Write ``mesh`` deterministically: vertices, triangles, then sorted boundary edges."""
    lines = [f"{mesh.n_vertices} {mesh.n_elements} {len(mesh.boundary_edges)}"]
    for (x, y), m in zip(mesh.vertices.tolist(), mesh.markers.tolist()):
        lines.append(f"{x:.17g} {y:.17g} {m}")
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist())
    lines.extend(f"{i} {j}" for i, j in mesh.boundary_edges.tolist())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
