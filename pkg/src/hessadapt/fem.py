"""Linear finite elements for the Dirichlet Poisson problem and error norms."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh
from .quadrature import BARYCENTRIC, quadrature_points

logger = logging.getLogger(__name__)

CG_RTOL = 1e-10


class SolverError(RuntimeError):
    """Raised when the iterative solver does not reach its tolerance."""


@dataclass
class Problem:
    """Dirichlet problem ``-lap u = f`` in the domain, ``u = g`` on its boundary.

    All callables take coordinate arrays ``(x, y)`` and broadcast: ``u`` and
    ``f`` return ``x.shape``, ``grad_exact`` returns ``x.shape + (2,)`` and
    ``hess_exact`` returns ``x.shape + (2, 2)``.
    """

    f: Callable
    g: Callable
    u_exact: Optional[Callable] = None
    grad_exact: Optional[Callable] = None
    hess_exact: Optional[Callable] = None
    name: str = "custom"
    domain: tuple = (0.0, 1.0, 0.0, 1.0)

    def check_boundary(self, mesh: Mesh, atol: float = 1e-10) -> None:
        if self.u_exact is None:
            return
        b = np.array(sorted(mesh.boundary_vertices))
        x, y = mesh.vertices[b].T
        if not np.allclose(self.g(x, y), self.u_exact(x, y), rtol=0.0, atol=atol):
            raise ValueError("boundary data g does not match u_exact on the boundary")


@dataclass
class ScalarField:
    """One value per mesh vertex."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("scalar field must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field has non-finite values")

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _values(uh) -> np.ndarray:
    return np.asarray(getattr(uh, "values", uh), dtype=float)


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    g = mesh.shape_gradients
    local = np.einsum("kid,kjd->kij", g, g) * mesh.areas[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def load_vector(mesh: Mesh, f: Callable) -> np.ndarray:
    pts, w = quadrature_points(mesh)
    fq = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    local = np.einsum("kq,q,qi->ki", fq, w, BARYCENTRIC) * mesh.areas[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def pcg(a: sp.spmatrix, b: np.ndarray, rtol: float = CG_RTOL, maxiter: int | None = None):
    """Jacobi-preconditioned conjugate gradients; returns ``(x, iterations)``."""
    n = len(b)
    if maxiter is None:
        maxiter = int(20 * np.sqrt(n)) + 1000
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    dinv = 1.0 / a.diagonal()
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        ap = a @ p
        step = rz / (p @ ap)
        x += step * p
        r -= step * ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations "
                      f"(relative residual {np.linalg.norm(r) / bnorm:.2e})")


def solve_poisson(mesh: Mesh, problem: Problem) -> ScalarField:
    """P1 Galerkin solution with Dirichlet rows and columns eliminated."""
    n = mesh.n_vertices
    bnd = mesh.is_boundary_vertex
    x, y = mesh.vertices.T
    u = np.zeros(n)
    u[bnd] = problem.g(x[bnd], y[bnd])
    free = np.flatnonzero(~bnd)
    if len(free) == 0:
        return ScalarField(u)
    a = stiffness_matrix(mesh)
    rhs = load_vector(mesh, problem.f) - a @ u
    a_ff = a[free][:, free]
    u_free, its = pcg(a_ff.tocsr(), rhs[free])
    logger.debug("CG converged in %d iterations (%d unknowns)", its, len(free))
    u[free] = u_free
    return ScalarField(u)


def nodal_interpolant(mesh: Mesh, u: Callable) -> ScalarField:
    x, y = mesh.vertices.T
    return ScalarField(np.broadcast_to(np.asarray(u(x, y), dtype=float), x.shape).copy())


def element_gradients(mesh: Mesh, uh) -> np.ndarray:
    """(nt, 2) constant gradient of the P1 function on each element."""
    vals = _values(uh)[mesh.triangles]
    return np.einsum("ki,kid->kd", vals, mesh.shape_gradients)


def h1_seminorm_error(mesh: Mesh, uh, problem: Problem) -> float:
    if problem.grad_exact is None:
        raise ValueError("problem has no exact gradient")
    pts, w = quadrature_points(mesh)
    gq = np.asarray(problem.grad_exact(pts[..., 0], pts[..., 1]), dtype=float)
    diff = gq - element_gradients(mesh, uh)[:, None, :]
    return float(np.sqrt(np.sum(mesh.areas[:, None] * w * np.sum(diff**2, axis=-1))))


def interp_error_h1(mesh: Mesh, problem: Problem) -> float:
    """``|u - Pi_h u|_{H1}`` for the exact solution."""
    if problem.u_exact is None or problem.grad_exact is None:
        raise ValueError("problem needs an exact solution and gradient")
    return h1_seminorm_error(mesh, nodal_interpolant(mesh, problem.u_exact), problem)


def l2_error(mesh: Mesh, uh, problem: Problem) -> float:
    if problem.u_exact is None:
        raise ValueError("problem has no exact solution")
    pts, w = quadrature_points(mesh)
    uq = np.broadcast_to(np.asarray(problem.u_exact(pts[..., 0], pts[..., 1]), float), pts.shape[:2])
    uhq = _values(uh)[mesh.triangles] @ BARYCENTRIC.T
    return float(np.sqrt(np.sum(mesh.areas[:, None] * w * (uq - uhq) ** 2)))


def interp_error_l2(mesh: Mesh, problem: Problem) -> float:
    return l2_error(mesh, nodal_interpolant(mesh, problem.u_exact), problem)

