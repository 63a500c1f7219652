"""Symmetric 2x2 tensor algebra, metric tensor builders and regularization solvers.

Tensor fields are stored as arrays of shape ``(..., 2, 2)``. Every function
that takes a tensor also accepts a :class:`Sym2` and then returns one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .quadrature import quadrature_points

if TYPE_CHECKING:
    from .fem import Problem
    from .geometry import Mesh

H1 = "h1"
L2 = "l2"

_BISECT_MAX_ITER = 200
_BISECT_RTOL = 1e-14


class SingularMetricError(ValueError):
    """Raised when a regularized tensor ``alpha*I + |R|`` is not positive definite."""


@dataclass(frozen=True)
class Sym2:
    """Symmetric 2x2 tensor ``[[a11, a12], [a12, a22]]``."""

    a11: float
    a12: float
    a22: float

    @classmethod
    def from_matrix(cls, m) -> Sym2:
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    def eig(self):
        """Ascending eigenvalues and the matrix whose columns are the eigenvectors."""
        lam, q = sym_eig(self.as_matrix())
        return lam, q

    def __array__(self, dtype=None, copy=None):
        return self.as_matrix() if dtype is None else self.as_matrix().astype(dtype)


def _unwrap(t):
    if isinstance(t, Sym2):
        return t.as_matrix(), True
    return np.asarray(t, dtype=float), False


def _rewrap(m, was_sym2):
    return Sym2.from_matrix(m) if was_sym2 else m


def sym_pack(a11, a12, a22) -> np.ndarray:
    a11, a12, a22 = np.broadcast_arrays(
        np.asarray(a11, float), np.asarray(a12, float), np.asarray(a22, float)
    )
    out = np.empty(a11.shape + (2, 2))
    out[..., 0, 0] = a11
    out[..., 0, 1] = a12
    out[..., 1, 0] = a12
    out[..., 1, 1] = a22
    return out


def _eig_parts(a):
    a11 = a[..., 0, 0]
    a12 = a[..., 0, 1]
    a22 = a[..., 1, 1]
    mid = 0.5 * (a11 + a22)
    rad = np.hypot(0.5 * (a11 - a22), a12)
    det = a11 * a22 - a12 * a12
    big_pos = mid + rad
    big_neg = mid - rad
    with np.errstate(divide="ignore", invalid="ignore"):
        # The eigenvalue of smaller magnitude comes from det / (larger one).
        lo = np.where(mid >= 0, np.where(big_pos != 0, det / big_pos, 0.0), big_neg)
        hi = np.where(mid >= 0, big_pos, np.where(big_neg != 0, det / big_neg, 0.0))
    theta = 0.5 * np.arctan2(2.0 * a12, a11 - a22)
    return lo, hi, np.cos(theta), np.sin(theta)


def sym_eig(a):
    """Closed-form eigen-decomposition of symmetric 2x2 tensors.

    Returns ``(lam, q)`` with ``lam[..., 0] <= lam[..., 1]`` and ``q[..., :, k]``
    the unit eigenvector of ``lam[..., k]``.
    """
    a, _ = _unwrap(a)
    lo, hi, c, s = _eig_parts(a)
    lam = np.stack([lo, hi], axis=-1)
    q = np.empty(a.shape)
    q[..., 0, 0] = -s
    q[..., 1, 0] = c
    q[..., 0, 1] = c
    q[..., 1, 1] = s
    return lam, q


def sym_eigvals(a) -> np.ndarray:
    a, _ = _unwrap(a)
    lo, hi, _, _ = _eig_parts(a)
    return np.stack([lo, hi], axis=-1)


def sym_apply(a, fun):
    """``Q f(Lambda) Q^T`` assembled componentwise, so the result is exactly symmetric."""
    a, wrapped = _unwrap(a)
    lo, hi, c, s = _eig_parts(a)
    flo, fhi = fun(lo), fun(hi)
    out = sym_pack(flo * s * s + fhi * c * c, (fhi - flo) * c * s, flo * c * c + fhi * s * s)
    return _rewrap(out, wrapped)


def abs_sym(t):
    """``|t| = sqrt(t^2)``: same eigenvectors as ``t``, eigenvalues replaced by their moduli."""
    return sym_apply(t, np.abs)


def sym_log(t):
    return sym_apply(t, np.log)


def sym_exp(t):
    return sym_apply(t, np.exp)


def sym_det(t) -> np.ndarray:
    t, _ = _unwrap(t)
    return t[..., 0, 0] * t[..., 1, 1] - t[..., 0, 1] * t[..., 0, 1]


def spectral_norm(t) -> np.ndarray:
    """Matrix 2-norm of a symmetric tensor, the largest eigenvalue modulus."""
    lam = sym_eigvals(t)
    return np.max(np.abs(lam), axis=-1)


def inf_norm(t) -> np.ndarray:
    """Maximum absolute row sum."""
    t, _ = _unwrap(t)
    return np.max(np.abs(t).sum(axis=-1), axis=-1)


def _regularized_eigs(rk, alpha):
    rk, wrapped = _unwrap(rk)
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("alpha must be non-negative")
    lam = np.abs(sym_eigvals(rk))
    lam = np.sort(lam, axis=-1) + np.asarray(alpha, dtype=float)[..., None]
    if np.any(lam[..., 0] <= 0.0) or not np.all(np.isfinite(lam)):
        raise SingularMetricError("alpha*I + |R| is singular; a positive alpha is required")
    return rk, wrapped, lam


def _regularized(rk, alpha):
    b = abs_sym(rk)
    return b + np.asarray(alpha, dtype=float)[..., None, None] * np.eye(2)


def metric_h1(rk, alpha: float = 0.0):
    """H1-optimal metric ``det(B)^(-1/4) ||B||_2^(1/2) B`` with ``B = alpha*I + |rk|``."""
    rk, wrapped, lam = _regularized_eigs(rk, alpha)
    scale = (lam[..., 0] * lam[..., 1]) ** -0.25 * lam[..., 1] ** 0.5
    return _rewrap(scale[..., None, None] * _regularized(rk, alpha), wrapped)


def metric_l2(rk, alpha: float = 0.0):
    """L2-optimal metric ``det(B)^(-1/6) B`` with ``B = alpha*I + |rk|``."""
    rk, wrapped, lam = _regularized_eigs(rk, alpha)
    scale = (lam[..., 0] * lam[..., 1]) ** (-1.0 / 6.0)
    return _rewrap(scale[..., None, None] * _regularized(rk, alpha), wrapped)


@dataclass
class MetricField:
    """One SPD tensor per element plus the regularization used to build it."""

    tensors: np.ndarray
    alpha: float
    kind: str = H1

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.kind not in (H1, L2):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        lam = sym_eigvals(self.tensors)
        if not np.all(np.isfinite(lam)) or np.any(lam[..., 0] <= 0):
            raise SingularMetricError("metric tensors must be symmetric positive definite")

    def __len__(self):
        return len(self.tensors)

    def scaled(self, factor: float) -> MetricField:
        return MetricField(self.tensors * factor, self.alpha, self.kind)


def build_metric(rk, alpha: float, kind: str = H1) -> MetricField:
    """Element metric field from element-averaged Hessians ``rk`` (array or field)."""
    tensors = getattr(rk, "tensors", rk)
    builder = {H1: metric_h1, L2: metric_l2}[kind]
    return MetricField(builder(tensors, alpha), alpha, kind)


def _bisect_increasing(fun, target, hi):
    """Smallest-bracket bisection for ``fun(alpha) = target`` with ``fun`` increasing from below."""
    lo = 0.0
    for _ in range(_BISECT_MAX_ITER):
        if fun(hi) >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RuntimeError("failed to bracket the regularization parameter")
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if fun(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _BISECT_RTOL * hi:
            break
    return 0.5 * (lo + hi)


def alpha_h_equation(areas, rk, alpha):
    """Left and right sides of the discrete equation fixing ``alpha_h``.

    ``sum |K| det(B_K)^(1/4) ||B_K||^(1/2)`` with ``B_K = alpha*I + |R_K|``
    against ``sqrt(2) sum |K| det(|R_K|)^(1/4) ||R_K||^(1/2)``.
    """
    lam = np.sort(np.abs(sym_eigvals(rk)), axis=-1)
    lhs = float(np.sum(areas * ((alpha + lam[:, 0]) * (alpha + lam[:, 1])) ** 0.25 * (alpha + lam[:, 1]) ** 0.5))
    rhs = 2.0**0.5 * float(np.sum(areas * (lam[:, 0] * lam[:, 1]) ** 0.25 * lam[:, 1] ** 0.5))
    return lhs, rhs


def solve_alpha_h(mesh: Mesh, rk) -> float:
    """Regularization parameter from element-averaged recovered Hessians, by bisection."""
    rk = np.asarray(getattr(rk, "tensors", rk), dtype=float)
    if len(rk) != mesh.n_elements:
        raise ValueError("one tensor per element expected")
    lam = np.sort(np.abs(sym_eigvals(rk)), axis=-1)
    areas = mesh.areas
    _, rhs = alpha_h_equation(areas, rk, 0.0)
    if not rhs > 0.0:
        if not np.any(rk):
            raise ValueError("no meaningful metric; field is identically zero")
        raise ValueError("no meaningful metric; field is singular on every element")

    def lhs(alpha):
        return float(np.sum(areas * ((alpha + lam[:, 0]) * (alpha + lam[:, 1])) ** 0.25 * (alpha + lam[:, 1]) ** 0.5))

    return _bisect_increasing(lhs, rhs, float(lam[:, 1].max()) + 1.0)


def _quasi_norm_half(weights, values):
    """``||f||_{L^{1/2}} = (int |f|^(1/2))^2`` for the norm field ``values``."""
    return float(np.sum(weights * np.sqrt(values))) ** 2


def exact_hessian_samples(mesh: Mesh, problem: Problem):
    """Exact Hessian at the element quadrature points with the matching weights."""
    if problem.hess_exact is None:
        raise ValueError("problem has no exact Hessian")
    pts, w = quadrature_points(mesh)
    hess = np.asarray(problem.hess_exact(pts[..., 0], pts[..., 1]), dtype=float)
    weights = mesh.areas[:, None] * w[None, :]
    return hess, weights


def alpha_exact_equation(mesh: Mesh, problem: Problem, alpha: float, _samples=None):
    """Both sides of the continuous equation defining ``alpha`` from the exact Hessian.

    Left: ``|| det(alpha*I + |H|)^(1/2) (alpha*I + |H|) ||_{L^{1/2}}``.
    Right: ``2 || det(|H|)^(1/2) H ||_{L^{1/2}}``.
    """
    hess, weights = _samples if _samples is not None else exact_hessian_samples(mesh, problem)
    lam = np.sort(np.abs(sym_eigvals(hess)), axis=-1)
    lhs = _quasi_norm_half(weights, np.sqrt((alpha + lam[..., 0]) * (alpha + lam[..., 1])) * (alpha + lam[..., 1]))
    rhs = 2.0 * _quasi_norm_half(weights, np.sqrt(lam[..., 0] * lam[..., 1]) * lam[..., 1])
    return lhs, rhs


def solve_alpha_exact(mesh: Mesh, problem: Problem) -> float:
    """Regularization parameter from the exact Hessian, by bisection on quadrature sums."""
    samples = exact_hessian_samples(mesh, problem)
    _, rhs = alpha_exact_equation(mesh, problem, 0.0, samples)
    if not rhs > 0.0:
        raise ValueError("no meaningful metric; exact Hessian is identically zero")
    lam_max = float(np.abs(sym_eigvals(samples[0])).max())

    def lhs(alpha):
        return alpha_exact_equation(mesh, problem, alpha, samples)[0]

    return _bisect_increasing(lhs, rhs, lam_max + 1.0)
