"""Metric-conforming local remeshing: split, collapse, swap and smooth sweeps.

The remesher works on plain ``(P, T)`` arrays and rebuilds the edge
topology between phases. Vertex metrics are always evaluated from a fixed
background (the input mesh and its element metrics) by log-Euclidean
interpolation, so every vertex, old or new, sees the same field.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from matplotlib.tri import Triangulation
from scipy.spatial import cKDTree

from .geometry import Mesh, MeshError, write_mesh
from .metric import MetricField, SingularMetricError, sym_det, sym_eigvals, sym_exp, sym_log

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
# Metric area of the unit-edge equilateral triangle.
UNIT_TRIANGLE_AREA = SQRT3 / 4.0
_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass
class AdaptParams:
    target_n: int
    max_passes: int = 20
    edge_low: float = 1.0 / math.sqrt(2.0)
    edge_high: float = math.sqrt(2.0)
    quality_floor: float = 0.4
    smooth_iters: int = 3
    swap_rounds: int = 4
    count_tolerance: float = 0.1
    debug_dir: str | None = None

    def __post_init__(self):
        if not 0 < self.edge_low < 1 < self.edge_high:
            raise ValueError("edge band must satisfy 0 < edge_low < 1 < edge_high")
        if self.target_n < 2:
            raise ValueError("target_n must be at least 2")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if not 0 < self.quality_floor <= 1:
            raise ValueError("quality_floor must lie in (0, 1]")


@dataclass
class AdaptResult:
    """Output mesh, its element metric (interpolated from the input) and a status flag."""

    mesh: Mesh
    metric: MetricField
    flagged: bool
    info: dict = field(default_factory=dict)


def metric_edge_length(p, q, m_at_p, m_at_q) -> float:
    """Two-point metric length: mean of ``sqrt(e^T M e)`` under the endpoint tensors."""
    e = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    out = []
    for m in (m_at_p, m_at_q):
        m = np.asarray(m, dtype=float)
        lam = sym_eigvals(m)
        if not np.isfinite(lam).all() or lam[0] <= 0:
            raise SingularMetricError("metric tensor must be symmetric positive definite")
        out.append(math.sqrt(float(e @ m @ e)))
    return 0.5 * (out[0] + out[1])


def metric_volume(mesh: Mesh, metric) -> float:
    t = np.asarray(getattr(metric, "tensors", metric), dtype=float)
    return float(np.sum(mesh.areas * np.sqrt(sym_det(t))))


def scale_metric_to_target(mesh: Mesh, metric: MetricField, target_n: int) -> MetricField:
    """Scale ``metric`` so that a unit-edge mesh in it has about ``target_n`` elements."""
    vol = metric_volume(mesh, metric)
    if not vol > 0.0:
        raise ValueError("zero total metric volume")
    return metric.scaled(target_n * UNIT_TRIANGLE_AREA / vol)


# ---------------------------------------------------------------- background


class _Background:
    """Log-Euclidean interpolation of an element metric field defined on ``mesh``."""

    def __init__(self, mesh: Mesh, tensors: np.ndarray):
        logs = sym_log(tensors)
        nv = mesh.n_vertices
        w = np.repeat(mesh.areas, 3)
        tri = mesh.triangles.ravel()
        wsum = np.bincount(tri, weights=w, minlength=nv)
        nodal = np.empty((nv, 2, 2))
        flat = np.repeat(logs, 3, axis=0)
        for a, b in ((0, 0), (0, 1), (1, 1)):
            nodal[:, a, b] = np.bincount(tri, weights=w * flat[:, a, b], minlength=nv) / wsum
        nodal[:, 1, 0] = nodal[:, 0, 1]
        self.nodal_log = nodal
        self.mesh = mesh
        self._tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
        self._finder = self._tri.get_trifinder()
        self._tree = None
        self._inv_jac = np.linalg.inv(
            np.stack(
                [
                    mesh.vertices[mesh.triangles[:, 1]] - mesh.vertices[mesh.triangles[:, 0]],
                    mesh.vertices[mesh.triangles[:, 2]] - mesh.vertices[mesh.triangles[:, 0]],
                ],
                axis=-1,
            )
        )

    def log_at(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        out = np.empty((len(pts), 2, 2))
        if len(pts) == 0:
            return out
        k = np.asarray(self._finder(pts[:, 0], pts[:, 1]), dtype=np.int64)
        inside = k >= 0
        if np.any(inside):
            kk = k[inside]
            tri = self.mesh.triangles[kk]
            rel = pts[inside] - self.mesh.vertices[tri[:, 0]]
            lam12 = np.einsum("kij,kj->ki", self._inv_jac[kk], rel)
            bary = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
            bary = np.clip(bary, 0.0, None)
            bary /= bary.sum(axis=1, keepdims=True)
            out[inside] = np.einsum("ki,kiab->kab", bary, self.nodal_log[tri])
        if not np.all(inside):
            if self._tree is None:
                self._tree = cKDTree(self.mesh.vertices)
            _, j = self._tree.query(pts[~inside])
            out[~inside] = self.nodal_log[j]
        return out


# ---------------------------------------------------------------- helpers


def _topology(T: np.ndarray, nv: int):
    """Unique edges, edge index of each local edge and the (<=2) triangles per edge."""
    local = T[:, _LOCAL_EDGES].reshape(-1, 2)
    keys = np.minimum(local[:, 0], local[:, 1]) * nv + np.maximum(local[:, 0], local[:, 1])
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    edges = np.column_stack([uniq // nv, uniq % nv])
    e_of_t = inv.reshape(-1, 3)
    et = np.full((len(uniq), 2), -1, dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    fs = inv[order]
    first = np.r_[True, fs[1:] != fs[:-1]]
    tri_of = order // 3
    et[fs[first], 0] = tri_of[first]
    et[fs[~first], 1] = tri_of[~first]
    return edges, e_of_t, et, counts


def _edge_lengths(P, M, edges):
    d = P[edges[:, 1]] - P[edges[:, 0]]
    la = np.sqrt(np.einsum("ki,kij,kj->k", d, M[edges[:, 0]], d))
    lb = np.sqrt(np.einsum("ki,kij,kj->k", d, M[edges[:, 1]], d))
    return 0.5 * (la + lb)


def _element_metric(logv, T, scale):
    return scale * sym_exp(logv[T].mean(axis=1))


def _quality_with(P, T, mk):
    """Signed metric quality ``4 sqrt(3) |K|_M / sum L_M^2`` (1 for metric-equilateral)."""
    p = P[T]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    area = 0.5 * (e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0])
    sum_l2 = np.einsum("kei,kij,kej->k", e, mk, e)
    return 4.0 * SQRT3 * area * np.sqrt(sym_det(mk)) / sum_l2


def _corner_flags(P, T, is_bnd):
    """Boundary vertices whose two boundary edges are not collinear."""
    nv = len(P)
    edges, _, et, counts = _topology(T, nv)
    be = edges[counts == 1]
    corner = np.zeros(nv, dtype=bool)
    if len(be) == 0:
        return corner
    nb = np.zeros(nv, dtype=np.int64)
    np.add.at(nb, be.ravel(), 1)
    dirs = np.zeros((nv, 2, 2))
    slot = np.zeros(nv, dtype=np.int64)
    for a, b in be:
        for v, w in ((a, b), (b, a)):
            if slot[v] < 2:
                d = P[w] - P[v]
                dirs[v, slot[v]] = d / np.hypot(*d)
            slot[v] += 1
    cross = dirs[:, 0, 0] * dirs[:, 1, 1] - dirs[:, 0, 1] * dirs[:, 1, 0]
    corner[nb != 2] = True
    corner[(nb == 2) & (np.abs(cross) > 1e-8)] = True
    corner &= is_bnd
    return corner


class _State:
    """Mutable working mesh with vertex metrics from the background."""

    def __init__(self, P, T, is_bnd, is_corner, bg: _Background, scale: float):
        self.P = P
        self.T = T
        self.is_bnd = is_bnd
        self.is_corner = is_corner
        self.bg = bg
        self.scale = scale
        self.logv = bg.log_at(P)
        self.refresh_metrics()

    def refresh_metrics(self):
        self.M = self.scale * sym_exp(self.logv)

    def set_scale(self, scale):
        self.scale = scale
        self.refresh_metrics()

    def topology(self):
        return _topology(self.T, len(self.P))

    def element_metric(self, T=None):
        return _element_metric(self.logv, self.T if T is None else T, self.scale)

    def quality(self, T=None):
        T = self.T if T is None else T
        return _quality_with(self.P, T, self.element_metric(T))

    def add_vertices(self, pts, bnd):
        self.P = np.concatenate([self.P, pts])
        self.is_bnd = np.concatenate([self.is_bnd, bnd])
        self.is_corner = np.concatenate([self.is_corner, np.zeros(len(pts), dtype=bool)])
        logs = self.bg.log_at(pts)
        self.logv = np.concatenate([self.logv, logs])
        self.M = np.concatenate([self.M, self.scale * sym_exp(logs)])


# ---------------------------------------------------------------- split


def _split_round(st: _State, edge_high: float) -> int:
    edges, e_of_t, et, counts = st.topology()
    L = _edge_lengths(st.P, st.M, edges)
    long_ = L > edge_high
    if not np.any(long_):
        return 0
    # Each triangle nominates its longest edge; an edge is split when every
    # adjacent triangle nominated it, so no triangle loses two edges at once.
    le = L[e_of_t]
    loc = np.argmax(le, axis=1)
    nominated = e_of_t[np.arange(len(st.T)), loc]
    votes = np.bincount(nominated, minlength=len(edges))
    need = np.where(et[:, 1] >= 0, 2, 1)
    chosen = long_ & (votes == need)
    ids = np.flatnonzero(chosen)
    if len(ids) == 0:
        return 0
    new_index = np.full(len(edges), -1, dtype=np.int64)
    new_index[ids] = len(st.P) + np.arange(len(ids))
    mid = 0.5 * (st.P[edges[ids, 0]] + st.P[edges[ids, 1]])
    st.add_vertices(mid, counts[ids] == 1)

    tsel = np.flatnonzero(chosen[nominated])
    keep = np.ones(len(st.T), dtype=bool)
    keep[tsel] = False
    l = loc[tsel]
    tri = st.T[tsel]
    a = tri[np.arange(len(tsel)), l]
    b = tri[np.arange(len(tsel)), (l + 1) % 3]
    c = tri[np.arange(len(tsel)), (l + 2) % 3]
    m = new_index[nominated[tsel]]
    st.T = np.concatenate([st.T[keep], np.column_stack([a, m, c]), np.column_stack([m, b, c])])
    return len(ids)


def _split_phase(st: _State, edge_high: float, max_rounds: int = 60) -> int:
    total = 0
    for _ in range(max_rounds):
        n = _split_round(st, edge_high)
        total += n
        if n == 0:
            break
    return total


# ---------------------------------------------------------------- collapse


def _tri_quality_py(pts, m):
    """Quality of one triangle from python coordinates and a packed metric ``(m11, m12, m22)``."""
    (x0, y0), (x1, y1), (x2, y2) = pts
    m11, m12, m22 = m
    area = 0.5 * ((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0))
    if area <= 0.0:
        return -1.0
    s = 0.0
    for dx, dy in ((x1 - x0, y1 - y0), (x2 - x1, y2 - y1), (x0 - x2, y0 - y2)):
        s += m11 * dx * dx + 2.0 * m12 * dx * dy + m22 * dy * dy
    det = m11 * m22 - m12 * m12
    return 4.0 * SQRT3 * area * math.sqrt(max(det, 0.0)) / s


def _collapse_phase(st: _State, params: AdaptParams) -> int:
    nv = len(st.P)
    edges, _, _, _ = st.topology()
    L = _edge_lengths(st.P, st.M, edges)
    cand = np.flatnonzero(L < params.edge_low)
    if len(cand) == 0:
        return 0
    cand = cand[np.argsort(L[cand], kind="stable")]

    T = st.T.tolist()
    px = st.P[:, 0].tolist()
    py = st.P[:, 1].tolist()
    m11 = st.M[:, 0, 0].tolist()
    m12 = st.M[:, 0, 1].tolist()
    m22 = st.M[:, 1, 1].tolist()
    is_bnd = st.is_bnd.tolist()
    is_corner = st.is_corner.tolist()
    vt = [set() for _ in range(nv)]
    for k, (a, b, c) in enumerate(T):
        vt[a].add(k)
        vt[b].add(k)
        vt[c].add(k)
    alive_t = [True] * len(T)
    alive_v = [True] * nv
    high = params.edge_high
    floor = params.quality_floor

    def length(a, b):
        dx, dy = px[b] - px[a], py[b] - py[a]
        la = math.sqrt(m11[a] * dx * dx + 2.0 * m12[a] * dx * dy + m22[a] * dy * dy)
        lb = math.sqrt(m11[b] * dx * dx + 2.0 * m12[b] * dx * dy + m22[b] * dy * dy)
        return 0.5 * (la + lb)

    def quality(tri):
        a, b, c = tri
        m = (
            (m11[a] + m11[b] + m11[c]) / 3.0,
            (m12[a] + m12[b] + m12[c]) / 3.0,
            (m22[a] + m22[b] + m22[c]) / 3.0,
        )
        return _tri_quality_py(((px[a], py[a]), (px[b], py[b]), (px[c], py[c])), m)

    def attempt(a, b):
        """Check removing ``a`` by merging it into ``b``; returns new triangles or None."""
        if is_corner[a]:
            return None
        ta, tb = vt[a], vt[b]
        shared = ta & tb
        if not shared:
            return None
        boundary_edge = len(shared) == 1
        if is_bnd[a] and not boundary_edge:
            return None
        opp = set()
        for k in shared:
            opp.update(T[k])
        opp -= {a, b}
        na = set()
        for k in ta:
            na.update(T[k])
        na.discard(a)
        nb = set()
        for k in tb:
            nb.update(T[k])
        nb.discard(b)
        if (na & nb) != opp:
            return None
        old_q = min(quality(T[k]) for k in ta)
        guard = min(floor, old_q)
        out = []
        for k in ta - shared:
            tri = [b if v == a else v for v in T[k]]
            q = quality(tri)
            if q < guard or q <= 0.0:
                return None
            out.append((k, tri))
        for v in na - nb - {b}:
            if length(b, v) > high:
                return None
        return shared, out

    done = 0
    for e in cand.tolist():
        a, b = int(edges[e, 0]), int(edges[e, 1])
        if not (alive_v[a] and alive_v[b]):
            continue
        res, victim, keeper = None, None, None
        for x, y in ((a, b), (b, a)):
            res = attempt(x, y)
            if res is not None:
                victim, keeper = x, y
                break
        if res is None:
            continue
        shared, out = res
        for k in shared:
            alive_t[k] = False
            for v in T[k]:
                vt[v].discard(k)
        for k, tri in out:
            T[k] = tri
            vt[keeper].add(k)
        vt[victim] = set()
        alive_v[victim] = False
        done += 1

    if done == 0:
        return 0
    T = np.asarray([t for t, ok in zip(T, alive_t) if ok], dtype=np.int64)
    keep = np.asarray(alive_v)
    remap = np.cumsum(keep) - 1
    st.T = remap[T]
    st.P = st.P[keep]
    st.is_bnd = st.is_bnd[keep]
    st.is_corner = st.is_corner[keep]
    st.logv = st.logv[keep]
    st.M = st.M[keep]
    return done


# ---------------------------------------------------------------- swap


def _swap_round(st: _State, min_gain: float = 1e-6) -> int:
    edges, e_of_t, et, _ = st.topology()
    inner = np.flatnonzero(et[:, 1] >= 0)
    if len(inner) == 0:
        return 0
    t1, t2 = et[inner, 0], et[inner, 1]
    T = st.T
    # Position of the edge inside t1 and t2.
    l1 = np.argmax(e_of_t[t1] == inner[:, None], axis=1)
    l2 = np.argmax(e_of_t[t2] == inner[:, None], axis=1)
    r = np.arange(len(inner))
    a = T[t1, l1]
    b = T[t1, (l1 + 1) % 3]
    c = T[t1, (l1 + 2) % 3]
    d = T[t2, (l2 + 2) % 3]
    q = st.quality()
    old = np.minimum(q[t1], q[t2])
    n1 = np.column_stack([a, d, c])
    n2 = np.column_stack([d, b, c])
    new = np.minimum(st.quality(n1), st.quality(n2))
    gain = new - old
    cand = gain > min_gain
    if not np.any(cand):
        return 0
    # Independent set: an edge flips when it is the best candidate of both its triangles.
    best = np.full(len(T), -np.inf)
    np.maximum.at(best, t1[cand], gain[cand])
    np.maximum.at(best, t2[cand], gain[cand])
    pick = cand & (gain >= best[t1]) & (gain >= best[t2])
    # Break exact ties deterministically by keeping the first edge per triangle.
    idx = np.flatnonzero(pick)
    used = np.zeros(len(T), dtype=bool)
    sel = []
    for i in idx.tolist():
        if used[t1[i]] or used[t2[i]]:
            continue
        used[t1[i]] = used[t2[i]] = True
        sel.append(i)
    sel = np.asarray(sel, dtype=np.int64)
    del r
    st.T = T.copy()
    st.T[t1[sel]] = n1[sel]
    st.T[t2[sel]] = n2[sel]
    return len(sel)


def _swap_phase(st: _State, rounds: int) -> int:
    total = 0
    for _ in range(rounds):
        n = _swap_round(st)
        total += n
        if n == 0:
            break
    return total


# ---------------------------------------------------------------- smooth


def _smooth_phase(st: _State, params: AdaptParams, relax: float = 0.5) -> int:
    moved_total = 0
    nv = len(st.P)
    for _ in range(params.smooth_iters):
        edges, _, _, _ = st.topology()
        L = _edge_lengths(st.P, st.M, edges)
        both = np.concatenate([edges, edges[:, ::-1]])
        LL = np.concatenate([L, L])
        i, j = both[:, 0], both[:, 1]
        # Position that puts vertex i at unit metric distance from neighbour j.
        tgt = st.P[j] + (st.P[i] - st.P[j]) / LL[:, None]
        deg = np.bincount(i, minlength=nv)
        acc = np.zeros((nv, 2))
        np.add.at(acc, i, tgt)
        mean = acc / np.maximum(deg, 1)[:, None]
        movable = ~st.is_bnd
        newP = st.P.copy()
        newP[movable] = st.P[movable] + relax * (mean[movable] - st.P[movable])

        q_old = st.quality()
        tri_flat = st.T.ravel()
        ball_old = np.full(nv, np.inf)
        np.minimum.at(ball_old, tri_flat, np.repeat(q_old, 3))
        guard = np.minimum(ball_old, params.quality_floor)

        new_logv = st.logv.copy()
        new_logv[movable] = st.bg.log_at(newP[movable])
        active = movable.copy()
        for _ in range(20):
            P_try = np.where(active[:, None], newP, st.P)
            lv = np.where(active[:, None, None], new_logv, st.logv)
            q = _quality_with(P_try, st.T, _element_metric(lv, st.T, st.scale))
            ball_new = np.full(nv, np.inf)
            np.minimum.at(ball_new, tri_flat, np.repeat(q, 3))
            bad = active & ((ball_new < guard) | (ball_new <= 0.0))
            if not np.any(bad):
                break
            active &= ~bad
        else:
            active[:] = False
        if not np.any(active):
            break
        st.P = np.where(active[:, None], newP, st.P)
        st.logv = np.where(active[:, None, None], new_logv, st.logv)
        st.refresh_metrics()
        moved_total += int(active.sum())
    return moved_total


# ---------------------------------------------------------------- repair


class _LocalEditor:
    """Python-level view of the working mesh for a handful of targeted edits."""

    def __init__(self, st: _State):
        self.st = st
        self.T = st.T.tolist()
        self.alive = [True] * len(self.T)
        self.P = [tuple(p) for p in st.P.tolist()]
        self.logv = list(st.logv)
        self.is_bnd = st.is_bnd.tolist()
        self.is_corner = st.is_corner.tolist()
        self.vt = [set() for _ in self.P]
        for k, tri in enumerate(self.T):
            for v in tri:
                self.vt[v].add(k)
        self.dead_v = set()

    def quality(self, tris, extra=None):
        """Log-Euclidean element qualities of index triples (``extra`` maps new vertices)."""
        if not tris:
            return np.array([])
        pts = {}
        logs = {}
        for tri in tris:
            for v in tri:
                if v not in pts:
                    if extra is not None and v in extra:
                        pts[v], logs[v] = extra[v]
                    else:
                        pts[v], logs[v] = self.P[v], self.logv[v]
        keys = list(pts)
        pos = {v: i for i, v in enumerate(keys)}
        P = np.array([pts[v] for v in keys])
        L = np.array([logs[v] for v in keys])
        T = np.array([[pos[v] for v in tri] for tri in tris])
        return _quality_with(P, T, _element_metric(L, T, self.st.scale))

    def length(self, a, b, extra=None):
        def get(v):
            if extra is not None and v in extra:
                p, lg = extra[v]
            else:
                p, lg = self.P[v], self.logv[v]
            return np.asarray(p), self.st.scale * sym_exp(lg)

        pa, ma = get(a)
        pb, mb = get(b)
        d = pb - pa
        return 0.5 * (math.sqrt(d @ ma @ d) + math.sqrt(d @ mb @ d))

    def ball_vertices(self, v):
        out = set()
        for k in self.vt[v]:
            out.update(self.T[k])
        out.discard(v)
        return out

    def collapse_option(self, a, b, max_len):
        """Merging ``a`` into ``b``: returns (score, apply) or None."""
        if self.is_corner[a]:
            return None
        shared = self.vt[a] & self.vt[b]
        if not shared:
            return None
        if self.is_bnd[a] and len(shared) != 1:
            return None
        opp = set()
        for k in shared:
            opp.update(self.T[k])
        opp -= {a, b}
        na, nb = self.ball_vertices(a), self.ball_vertices(b)
        if (na & nb) != opp:
            return None
        old = self.quality([self.T[k] for k in self.vt[a]]).min()
        moved = [(k, [b if v == a else v for v in self.T[k]]) for k in self.vt[a] - shared]
        new = self.quality([tri for _, tri in moved])
        if len(new) == 0 or new.min() <= old:
            return None
        if any(self.length(b, v) > max_len for v in na - nb - {b}):
            return None

        def apply():
            for k in shared:
                self.alive[k] = False
                for v in self.T[k]:
                    self.vt[v].discard(k)
            for k, tri in moved:
                self.T[k] = tri
                self.vt[b].add(k)
            self.vt[a] = set()
            self.dead_v.add(a)

        return new.min() - old, apply

    def split_option(self, a, b):
        """Bisecting edge ``ab`` at its midpoint: returns (score, apply) or None."""
        shared = sorted(self.vt[a] & self.vt[b])
        if not shared:
            return None
        mid = tuple(0.5 * (np.asarray(self.P[a]) + np.asarray(self.P[b])))
        lg = self.st.bg.log_at(np.array([mid]))[0]
        m = len(self.P)
        extra = {m: (mid, lg)}
        pieces = []
        for k in shared:
            tri = self.T[k]
            i = tri.index(a)
            if tri[(i + 1) % 3] == b:
                c = tri[(i + 2) % 3]
                pieces.append((k, [a, m, c], [m, b, c]))
            else:
                c = tri[(i + 1) % 3]
                pieces.append((k, [b, m, c], [m, a, c]))
        old = self.quality([self.T[k] for k in shared]).min()
        new = self.quality([t for _, t1, t2 in pieces for t in (t1, t2)], extra)
        if new.min() <= old:
            return None
        boundary = len(shared) == 1

        def apply():
            self.P.append(mid)
            self.logv.append(lg)
            self.is_bnd.append(boundary)
            self.is_corner.append(False)
            self.vt.append(set())
            for k, t1, t2 in pieces:
                for v in self.T[k]:
                    self.vt[v].discard(k)
                self.T[k] = t1
                self.T.append(t2)
                self.alive.append(True)
                k2 = len(self.T) - 1
                for v in t1:
                    self.vt[v].add(k)
                for v in t2:
                    self.vt[v].add(k2)

        return new.min() - old, apply

    def commit(self):
        st = self.st
        keep = np.ones(len(self.P), dtype=bool)
        keep[list(self.dead_v)] = False
        remap = np.cumsum(keep) - 1
        T = np.asarray([t for t, ok in zip(self.T, self.alive) if ok], dtype=np.int64)
        st.T = remap[T]
        st.P = np.asarray(self.P, dtype=float)[keep]
        st.is_bnd = np.asarray(self.is_bnd, dtype=bool)[keep]
        st.is_corner = np.asarray(self.is_corner, dtype=bool)[keep]
        st.logv = np.asarray(self.logv, dtype=float)[keep]
        st.refresh_metrics()


def _repair_phase(st: _State, params: AdaptParams, q_target: float = 0.45, max_edits: int = 200) -> int:
    """Collapse or bisect around the worst elements while the local minimum quality improves."""
    q = st.quality()
    bad = np.flatnonzero(q < q_target)
    if len(bad) == 0:
        return 0
    ed = _LocalEditor(st)
    edits = 0
    for k in bad[np.argsort(q[bad], kind="stable")].tolist()[:max_edits]:
        if not ed.alive[k]:
            continue
        tri = ed.T[k]
        if ed.quality([tri])[0] >= q_target:
            continue
        options = []
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            for x, y in ((a, b), (b, a)):
                opt = ed.collapse_option(x, y, params.edge_high * 1.25)
                if opt is not None:
                    options.append(opt)
            opt = ed.split_option(a, b)
            if opt is not None:
                options.append(opt)
        if not options:
            continue
        best = max(options, key=lambda o: o[0])
        if best[0] > 1e-3:
            best[1]()
            edits += 1
    if edits:
        ed.commit()
    return edits


# ---------------------------------------------------------------- driver


def _band_fraction(st: _State, params: AdaptParams) -> float:
    edges, _, _, _ = st.topology()
    L = _edge_lengths(st.P, st.M, edges)
    return float(np.mean((L >= params.edge_low) & (L <= params.edge_high)))


def _finalize(st: _State, input_mesh: Mesh) -> tuple[Mesh, MetricField]:
    markers = st.is_bnd.astype(np.int64)
    mesh = Mesh(st.P, st.T, markers=markers)
    tensors = st.element_metric(mesh.triangles)
    tensors = 0.5 * (tensors + np.swapaxes(tensors, -1, -2))
    return mesh, tensors


def adapt_mesh(mesh: Mesh, metric: MetricField, params: AdaptParams) -> AdaptResult:
    """Remesh toward unit metric edge lengths with about ``params.target_n`` elements.

    Returns an :class:`AdaptResult`; ``flagged`` is set when the edge band
    or the element count misses its target after ``max_passes`` sweeps, in
    which case the best mesh reached is still returned.
    """
    tensors = np.asarray(metric.tensors, dtype=float)
    if len(tensors) != mesh.n_elements:
        raise ValueError("metric must have one tensor per element of the input mesh")
    bg = _Background(mesh, tensors)
    P = np.array(mesh.vertices, dtype=float)
    T = np.array(mesh.triangles, dtype=np.int64)
    is_bnd = np.array(mesh.is_boundary_vertex)
    st = _State(P, T, is_bnd, _corner_flags(P, T, is_bnd), bg, 1.0)

    history = []
    for it in range(params.max_passes):
        n_split = _split_phase(st, params.edge_high)
        n_coll = 0
        for _ in range(4):
            c = _collapse_phase(st, params)
            n_coll += c
            if c == 0:
                break
        n_swap = _swap_phase(st, params.swap_rounds)
        n_smooth = _smooth_phase(st, params)
        n_swap += _swap_phase(st, params.swap_rounds)
        n_repair = _repair_phase(st, params)
        if n_repair:
            n_swap += _swap_phase(st, params.swap_rounds)

        nt = len(st.T)
        ratio = params.target_n / nt
        rescaled = False
        if abs(ratio - 1.0) > params.count_tolerance and it < params.max_passes - 2:
            st.set_scale(st.scale * ratio)
            rescaled = True
        band = _band_fraction(st, params)
        history.append(
            dict(split=n_split, collapse=n_coll, swap=n_swap, smooth=n_smooth, repair=n_repair, n=nt, band=band)
        )
        logger.debug("pass %d: %s", it, history[-1])
        if params.debug_dir:
            os.makedirs(params.debug_dir, exist_ok=True)
            try:
                write_mesh(Mesh(st.P, st.T), os.path.join(params.debug_dir, f"pass_{it:02d}.mesh"))
            except MeshError:
                pass
        quiet = n_split + n_coll <= max(2, 0.002 * nt)
        if not rescaled and quiet and it >= 1:
            break

    out_mesh, out_tensors = _finalize(st, mesh)
    band = _band_fraction(st, params)
    count_err = abs(out_mesh.n_elements / params.target_n - 1.0)
    flagged = band < 0.9 or count_err > 0.35
    q = _quality_with(out_mesh.vertices, out_mesh.triangles, out_tensors)
    info = dict(
        passes=len(history),
        history=history,
        band_fraction=band,
        count_error=count_err,
        scale=st.scale,
        min_quality=float(q.min()),
    )
    if flagged:
        logger.warning("adaptation flagged: band %.3f, count error %.3f", band, count_err)
    return AdaptResult(out_mesh, MetricField(out_tensors, metric.alpha, metric.kind), flagged, info)
