"""Hessian recovery from a piecewise linear solution: QLS, DLF, LLS and WF.

Every method returns a :class:`NodalTensorField`; :func:`element_average`
turns it into the element-wise ``R_K`` used by the metric builders.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .fem import element_gradients
from .geometry import Mesh, vertex_patch
from .metric import sym_pack

RANK_RTOL = 1e-10
QLS_MIN_NEIGHBORS = 5

METHODS = ("qls", "dlf", "lls", "wf")


class RecoveryError(RuntimeError):
    """Raised when a patch cannot support the fit even after expansion."""


@dataclass
class NodalTensorField:
    """One symmetric tensor per vertex, stored as ``(nv, 2, 2)``."""

    tensors: np.ndarray
    boundary_degraded: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if not np.all(np.isfinite(self.tensors)):
            raise ValueError("recovered tensors must be finite")

    def __len__(self):
        return len(self.tensors)


@dataclass
class ElementTensorField:
    """One symmetric tensor per element, stored as ``(nt, 2, 2)``."""

    tensors: np.ndarray

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if not np.all(np.isfinite(self.tensors)):
            raise ValueError("element tensors must be finite")

    def __len__(self):
        return len(self.tensors)


def _values(uh):
    return np.asarray(getattr(uh, "values", uh), dtype=float)


def _design(offsets, degree):
    x, y = offsets[..., 0], offsets[..., 1]
    cols = [np.ones_like(x), x, y]
    if degree == 2:
        cols += [x * x, x * y, y * y]
    return np.stack(cols, axis=-1)


def _fit_group(offsets, values, degree):
    """Batched least squares on ``(g, k, 2)`` offsets and ``(g, k, m)`` values.

    Offsets are scaled by the patch radius and columns by their norms; the
    solve goes through an SVD so linear data is reproduced to roundoff.
    A patch is rank deficient when ``lambda_min/lambda_max`` of the scaled
    Gram matrix falls below ``RANK_RTOL``. Returns coefficients in the
    scaled coordinates, the radii and a full-rank mask.
    """
    radius = np.sqrt(np.max(np.sum(offsets**2, axis=-1), axis=-1))
    a = _design(offsets / radius[:, None, None], degree)
    # Fitting deviations from the sample mean keeps roundoff relative to the patch variation.
    mean = values.mean(axis=1)
    values = values - mean[:, None, :]
    colnorm = np.sqrt(np.sum(a**2, axis=1))
    a = a / colnorm[:, None, :]
    u, sv, vt = np.linalg.svd(a, full_matrices=False)
    ok = sv[:, -1] ** 2 > RANK_RTOL * sv[:, 0] ** 2
    coef = np.zeros((len(a), a.shape[2], values.shape[2]))
    if np.any(ok):
        proj = np.einsum("gki,gkm->gim", u[ok], values[ok]) / sv[ok][:, :, None]
        coef[ok] = np.einsum("gji,gjm->gim", vt[ok], proj) / colnorm[ok][:, :, None]
    coef[:, 0, :] += mean
    return coef, radius, ok


def _fit_all(centers, samples, points, values, degree, expand):
    """Fit a polynomial per centre. ``samples[i]`` indexes ``points``/``values``.

    Rank-deficient centres call ``expand(i, current)`` for a larger sample
    set until the fit succeeds; ``expand`` returns ``None`` once exhausted.
    """
    n = len(centers)
    ncols = 3 if degree == 1 else 6
    coef = np.zeros((n, ncols, values.shape[1]))
    radius = np.zeros(n)
    pending = list(range(n))
    current = list(samples)
    while pending:
        groups = defaultdict(list)
        for i in pending:
            groups[len(current[i])].append(i)
        failed = []
        for k in sorted(groups):
            ids = groups[k]
            idx = np.array([current[i] for i in ids])
            offs = points[idx] - centers[ids][:, None, :]
            c, r, ok = _fit_group(offs, values[idx], degree)
            coef[ids] = c
            radius[ids] = r
            failed.extend(i for i, good in zip(ids, ok) if not good)
        pending = []
        for i in sorted(failed):
            bigger = expand(i, current[i])
            if bigger is None:
                raise RecoveryError(f"patch of vertex {i} cannot support a degree-{degree} fit")
            current[i] = bigger
            pending.append(i)
    return coef, radius


def _vertex_samples(mesh, min_size):
    """Sample lists ``[i] + patch`` per vertex and a matching expansion callback."""
    samples = [[i] + vertex_patch(mesh, i, min_size) for i in range(mesh.n_vertices)]

    def expand(i, cur):
        bigger = [i] + vertex_patch(mesh, i, len(cur))
        return bigger if len(bigger) > len(cur) else None

    return samples, expand


def _linear_gradient_fit(mesh, data, samples, expand):
    """Linear fit of each column of ``data`` (nv, m) over vertex samples; returns slopes (nv, m, 2)."""
    coef, radius = _fit_all(mesh.vertices, samples, mesh.vertices, data, 1, expand)
    return np.stack([coef[:, 1, :], coef[:, 2, :]], axis=-1) / radius[:, None, None]


def _symmetric_from_jacobian(jac):
    """Symmetric Hessian from ``jac[:, i, j] = d(grad_i)/dx_j`` by averaging mixed terms."""
    mixed = 0.5 * (jac[:, 0, 1] + jac[:, 1, 0])
    return sym_pack(jac[:, 0, 0], mixed, jac[:, 1, 1])


def recover_qls(mesh: Mesh, uh) -> NodalTensorField:
    """Hessian of a least-squares quadratic fitted on each vertex patch (vertex included)."""
    u = _values(uh)
    samples, expand = _vertex_samples(mesh, QLS_MIN_NEIGHBORS)
    coef, radius = _fit_all(mesh.vertices, samples, mesh.vertices, u[:, None], 2, expand)
    r2 = radius**2
    hess = sym_pack(2.0 * coef[:, 3, 0] / r2, coef[:, 4, 0] / r2, 2.0 * coef[:, 5, 0] / r2)
    return NodalTensorField(hess, boundary_degraded=mesh.is_boundary_vertex.copy())


def recover_dlf(mesh: Mesh, uh) -> NodalTensorField:
    """Two passes of linear least squares: nodal gradients, then their slopes."""
    u = _values(uh)
    samples, expand = _vertex_samples(mesh, 2)
    grad = _linear_gradient_fit(mesh, u[:, None], samples, expand)[:, 0, :]
    jac = _linear_gradient_fit(mesh, grad, samples, expand)
    return NodalTensorField(_symmetric_from_jacobian(jac), boundary_degraded=mesh.is_boundary_vertex.copy())


def lls_nodal_gradients(mesh: Mesh, uh) -> np.ndarray:
    """Nodal gradients from linear fits to element-centroid gradients around each vertex."""
    gk = element_gradients(mesh, uh)
    cent = mesh.centroids
    samples = [sorted(mesh.vertex_triangles(i).tolist()) for i in range(mesh.n_vertices)]

    def expand(i, cur):
        have = set(cur)
        for size in range(1, mesh.n_vertices):
            patch = vertex_patch(mesh, i, size)
            tris = set(cur)
            for v in patch:
                tris.update(mesh.vertex_triangles(v).tolist())
            if len(tris) > len(have):
                return sorted(tris)
            if len(patch) < size:
                return None
        return None

    coef, _ = _fit_all(mesh.vertices, samples, cent, gk, 1, expand)
    return coef[:, 0, :]


def recover_lls(mesh: Mesh, uh) -> NodalTensorField:
    """Centroid gradients fitted to nodes, then a linear fit of the nodal gradients."""
    grad = lls_nodal_gradients(mesh, uh)
    samples, expand = _vertex_samples(mesh, 2)
    jac = _linear_gradient_fit(mesh, grad, samples, expand)
    return NodalTensorField(_symmetric_from_jacobian(jac), boundary_degraded=mesh.is_boundary_vertex.copy())


def recover_wf(mesh: Mesh, uh) -> NodalTensorField:
    """Weak second derivatives tested against the hat function of each vertex.

    ``u_ab(x0) * int phi0 = -int d_a u_h d_b phi0 + int_boundary d_a u_h n_b phi0``;
    the boundary term vanishes at interior vertices and makes the result
    exact (zero) for linear data at boundary vertices. Mixed derivatives use
    the symmetrized integrand.
    """
    u = _values(uh)
    nv = mesh.n_vertices
    tri = mesh.triangles
    area = mesh.areas
    g = element_gradients(mesh, u)
    dphi = mesh.shape_gradients
    mass = np.bincount(tri.ravel(), weights=np.repeat(area / 3.0, 3), minlength=nv)
    # contributions[k, i, a, b] = -|K| g_a dphi_i,b
    contrib = -area[:, None, None, None] * g[:, None, :, None] * dphi[:, :, None, :]

    num = np.zeros((nv, 2, 2))
    for a in range(2):
        for b in range(2):
            num[:, a, b] = np.bincount(tri.ravel(), weights=contrib[:, :, a, b].ravel(), minlength=nv)

    counts = np.bincount(mesh.edge_of_local.ravel(), minlength=len(mesh.edges))
    k_idx, l_idx = np.nonzero(counts[mesh.edge_of_local] == 1)
    if len(k_idx):
        p = tri[k_idx, l_idx]
        q = tri[k_idx, (l_idx + 1) % 3]
        d = mesh.vertices[q] - mesh.vertices[p]
        # Interior lies to the left of a counterclockwise edge; (dy, -dx) points out.
        n_len = np.stack([d[:, 1], -d[:, 0]], axis=-1)  # unit normal times |e|
        flux = 0.5 * g[k_idx][:, :, None] * n_len[:, None, :]
        for a in range(2):
            for b in range(2):
                w = np.concatenate([flux[:, a, b], flux[:, a, b]])
                num[:, a, b] += np.bincount(np.concatenate([p, q]), weights=w, minlength=nv)

    mixed = 0.5 * (num[:, 0, 1] + num[:, 1, 0])
    hess = sym_pack(num[:, 0, 0] / mass, mixed / mass, num[:, 1, 1] / mass)
    return NodalTensorField(hess, boundary_degraded=mesh.is_boundary_vertex.copy())


_RECOVERERS = {"qls": recover_qls, "dlf": recover_dlf, "lls": recover_lls, "wf": recover_wf}


def recover(mesh: Mesh, uh, method: str) -> NodalTensorField:
    try:
        fun = _RECOVERERS[method.lower()]
    except KeyError:
        raise ValueError(f"unknown recovery method {method!r}; expected one of {METHODS}") from None
    return fun(mesh, uh)


def exact_nodal_hessian(mesh: Mesh, problem) -> NodalTensorField:
    if problem.hess_exact is None:
        raise ValueError("problem has no exact Hessian")
    x, y = mesh.vertices.T
    return NodalTensorField(np.asarray(problem.hess_exact(x, y), dtype=float))


def element_average(mesh: Mesh, field: NodalTensorField) -> ElementTensorField:
    """Arithmetic mean of the three vertex tensors of each element."""
    t = np.asarray(getattr(field, "tensors", field), dtype=float)
    if len(t) != mesh.n_vertices:
        raise ValueError("one tensor per vertex expected")
    return ElementTensorField(t[mesh.triangles].mean(axis=1))

