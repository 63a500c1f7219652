"""Mesh-quality and Hessian-closeness constants, and the error-bound factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import Problem
from .geometry import DEGENERATE_AREA_FLOOR, Mesh, MeshTopologyError
from .metric import H1, L2, SingularMetricError, abs_sym, inf_norm, sym_det, sym_eigvals, sym_apply
from .quadrature import quadrature_points


@dataclass
class MeshQualityReport:
    c_eq_per_element: np.ndarray
    c_ali_per_element: np.ndarray
    c_eq: float
    c_ali: float


@dataclass
class ClosenessReport:
    """Closeness of recovered and exact Hessians; unset parts are ``None``."""

    eps_per_element: np.ndarray | None = None
    eps: float | None = None
    cr_plus_per_element: np.ndarray | None = None
    cr_minus_per_element: np.ndarray | None = None
    cr_plus: float | None = None
    cr_minus: float | None = None
    ratio: float | None = None

    def merged(self, other: ClosenessReport) -> ClosenessReport:
        kw = {k: (v if v is not None else getattr(other, k)) for k, v in vars(self).items()}
        return ClosenessReport(**kw)


def _tensors(x) -> np.ndarray:
    return np.asarray(getattr(x, "tensors", x), dtype=float)


def _check_elements(mesh: Mesh):
    if np.any(mesh.areas <= DEGENERATE_AREA_FLOOR * mesh.domain_area):
        raise MeshTopologyError("degenerate element")


def mesh_quality(mesh: Mesh, metric) -> MeshQualityReport:
    """Equidistribution and alignment constants of every element.

    ``c_eq[K] = |K| det(M_K)^(1/2) / mean`` and
    ``c_ali[K] = tr(F'^T M_K F') / 2 / (|K| det(M_K)^(1/2))``, where ``F'`` is
    the Jacobian from the unit-area reference triangle (``det F' = |K|``).
    """
    _check_elements(mesh)
    m = _tensors(metric)
    if len(m) != mesh.n_elements:
        raise ValueError("one metric tensor per element expected")
    det = sym_det(m)
    if np.any(det <= 0) or np.any(m[:, 0, 0] <= 0):
        raise SingularMetricError("metric tensors must be SPD")
    vol = mesh.areas * np.sqrt(det)
    c_eq = vol / vol.mean()
    jac = mesh.jacobians
    tr = np.einsum("kai,kab,kbi->k", jac, m, jac)
    c_ali = 0.5 * tr / vol
    return MeshQualityReport(c_eq, c_ali, float(c_eq.max()), float(c_ali.max()))


def inverse_alignment_check(mesh: Mesh, metric, c_ali: float, return_sides: bool = False):
    """Per-element truth of ``tr(F'^-T M^-1 F'^-1)/2 < 2 c_ali |K|^-1 det(M)^-1/2``."""
    _check_elements(mesh)
    m = _tensors(metric)
    jinv = np.linalg.inv(mesh.jacobians)
    minv = np.linalg.inv(m)
    lhs = 0.5 * np.einsum("kia,kab,kib->k", jinv, minv, jinv)
    rhs = 2.0 * c_ali / (mesh.areas * np.sqrt(sym_det(m)))
    ok = lhs < rhs
    return (ok, lhs, rhs) if return_sides else ok


def _spectral_norm_diff(d):
    return np.max(np.abs(sym_eigvals(d)), axis=-1)


def epsilon_closeness(mesh: Mesh, rk, hk, alpha_h: float, alpha: float, norm: str = "inf") -> ClosenessReport:
    """``||(alpha_h I + |R_K|) - (alpha I + |H_K|)|| / lambda_min(alpha_h I + |R_K|)`` per element.

    ``norm="inf"`` uses the max-row-sum norm, ``norm="2"`` the spectral norm.
    """
    r = _tensors(rk)
    h = _tensors(hk)
    if len(r) != mesh.n_elements or len(h) != mesh.n_elements:
        raise ValueError("one tensor per element expected")
    if alpha_h < 0 or alpha < 0:
        raise ValueError("regularization parameters must be non-negative")
    eye = np.eye(2)
    br = alpha_h * eye + abs_sym(r)
    bh = alpha * eye + abs_sym(h)
    lam_min = sym_eigvals(br)[:, 0]
    if np.any(lam_min <= 0.0):
        raise SingularMetricError("alpha_h I + |R_K| is singular")
    diff = br - bh
    if norm == "inf":
        num = inf_norm(diff)
    elif norm == "2":
        num = _spectral_norm_diff(diff)
    else:
        raise ValueError("norm must be 'inf' or '2'")
    eps = num / lam_min
    return ClosenessReport(eps_per_element=eps, eps=float(eps.max()))


def _inv_sqrt(b):
    lam = sym_eigvals(b)
    if np.any(lam[..., 0] <= 0.0):
        raise SingularMetricError("alpha_h I + |R_K| is singular")
    return sym_apply(b, lambda v: 1.0 / np.sqrt(v))


def cr_constants(mesh: Mesh, rk, problem: Problem, alpha_h: float) -> ClosenessReport:
    """Element constants bounding ``B^-1 |H(x)|`` above and ``B^-1 (alpha_h I + |H(x)|)`` below.

    ``B = alpha_h I + |R_K|``; ``H`` is sampled at the quadrature points and
    the generalized eigenvalues come from ``B^-1/2 A B^-1/2``.
    """
    if problem.hess_exact is None:
        raise ValueError("problem has no exact Hessian")
    r = _tensors(rk)
    if len(r) != mesh.n_elements:
        raise ValueError("one tensor per element expected")
    b = alpha_h * np.eye(2) + abs_sym(r)
    s = _inv_sqrt(b)[:, None]
    pts, _ = quadrature_points(mesh)
    habs = abs_sym(np.asarray(problem.hess_exact(pts[..., 0], pts[..., 1]), dtype=float))
    plus = sym_eigvals(s @ habs @ s)[..., 1].max(axis=1)
    minus = sym_eigvals(s @ (habs + alpha_h * np.eye(2)) @ s)[..., 0].min(axis=1)
    cr_plus = float(np.sqrt(np.mean(plus**2)))
    cr_minus = float(minus.min())
    ratio = cr_plus / cr_minus if cr_minus > 0 else float("inf")
    return ClosenessReport(
        cr_plus_per_element=plus,
        cr_minus_per_element=minus,
        cr_plus=cr_plus,
        cr_minus=cr_minus,
        ratio=ratio,
    )


def bound_factor(problem: Problem, mesh: Mesh, alpha: float, kind: str = H1) -> float:
    """Solution-dependent factor of the interpolation-error bound, by quadrature.

    With ``B = alpha I + |H|``: for ``kind="h1"`` the quasi-norm
    ``(int (det(B)^(1/2) ||B||)^(1/2))^2``; for ``kind="l2"`` the product
    ``int det(B)^(1/3) * int det(B)^(1/6) ||B||``. Both carry the same
    power of ``N``, and the second dominates the first by Hoelder.
    """
    if problem.hess_exact is None:
        raise ValueError("problem has no exact Hessian")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    pts, w = quadrature_points(mesh)
    weights = mesh.areas[:, None] * w[None, :]
    lam = np.sort(np.abs(sym_eigvals(np.asarray(problem.hess_exact(pts[..., 0], pts[..., 1]), float))), axis=-1)
    lam = lam + alpha
    det = lam[..., 0] * lam[..., 1]
    norm = lam[..., 1]
    if kind == H1:
        return float(np.sum(weights * np.sqrt(np.sqrt(det) * norm))) ** 2
    if kind == L2:
        return float(np.sum(weights * det ** (1.0 / 3.0))) * float(np.sum(weights * det ** (1.0 / 6.0) * norm))
    raise ValueError(f"unknown metric kind {kind!r}")


def recovery_error_max(mesh: Mesh, rk, problem: Problem) -> float:
    """``max_K max_x ||R_K - H(x)||_inf`` over the quadrature points."""
    r = _tensors(rk)
    pts, _ = quadrature_points(mesh)
    h = np.asarray(problem.hess_exact(pts[..., 0], pts[..., 1]), dtype=float)
    return float(inf_norm(r[:, None] - h).max())
