"""Fast invariant suite behind ``hessadapt check``; no PDE solves involved."""

from __future__ import annotations

import io
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .adapt import AdaptParams, adapt_mesh, scale_metric_to_target
from .diagnostics import inverse_alignment_check, mesh_quality
from .fem import nodal_interpolant
from .geometry import Mesh, structured_mesh, write_mesh
from .metric import MetricField, abs_sym, alpha_h_equation, metric_h1, metric_l2, solve_alpha_h, sym_eig
from .recovery import METHODS, recover


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_spd(rng, n, log_spread=3.0):
    theta = rng.uniform(0, np.pi, n)
    lam = np.exp(rng.uniform(-log_spread, log_spread, (n, 2)))
    c, s = np.cos(theta), np.sin(theta)
    q = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return np.einsum("kij,kj,klj->kil", q, lam, q)


def random_symmetric(rng, n, scale=10.0):
    a = rng.normal(scale=scale, size=(n, 3))
    return np.stack([np.stack([a[:, 0], a[:, 1]], -1), np.stack([a[:, 1], a[:, 2]], -1)], -2)


def random_triangles(rng, n):
    """``n`` disjoint random non-degenerate triangles packed into one Mesh."""
    pts = rng.uniform(-1, 1, (n, 3, 2))
    e1, e2 = pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    keep = np.abs(area) > 1e-3
    pts = pts[keep] + 10.0 * np.arange(int(keep.sum()))[:, None, None] * np.array([1.0, 0.0])
    return Mesh(pts.reshape(-1, 2), np.arange(3 * len(pts)).reshape(-1, 3))


def random_unstructured_mesh(rng, k=8):
    """Jittered ``k x k`` grid with random diagonals on the unit square."""
    base = structured_mesh(k, diagonal=rng.random(k * k) < 0.5)
    pts = np.array(base.vertices)
    inner = ~base.is_boundary_vertex
    pts[inner] += rng.uniform(-0.3, 0.3, (int(inner.sum()), 2)) / k
    return Mesh(pts, base.triangles)


def check_am_gm(rng, n):
    mesh = random_triangles(rng, n)
    rep = mesh_quality(mesh, random_spd(rng, mesh.n_elements))
    worst = float(rep.c_ali_per_element.min())
    return CheckResult("c_ali >= 1 (AM-GM)", worst >= 1 - 1e-12, f"min c_ali = {worst:.15f} over {mesh.n_elements}")


def check_inverse_alignment(rng, n):
    mesh = random_triangles(rng, n)
    metric = random_spd(rng, mesh.n_elements)
    c_ali = mesh_quality(mesh, metric).c_ali
    ok = inverse_alignment_check(mesh, metric, c_ali)
    return CheckResult("inverse alignment follows alignment", bool(ok.all()), f"{int(ok.sum())}/{len(ok)} hold")


def check_abs_sym(rng, n):
    a = random_symmetric(rng, n)
    lam, vec = sym_eig(a)
    b = abs_sym(a)
    lam_b, _ = sym_eig(b)
    err_val = np.abs(np.sort(np.abs(lam), -1) - lam_b).max() / np.abs(lam).max()
    # |A| v = |lambda| v for every eigenpair of A.
    resid = np.einsum("kij,kjm->kim", b, vec) - vec * np.abs(lam)[:, None, :]
    err_vec = np.abs(resid).max() / np.abs(lam).max()
    err = max(err_val, err_vec)
    return CheckResult("abs_sym eigenstructure", err <= 1e-12, f"max relative error {err:.2e}")


def check_homogeneity(rng, n):
    a = random_symmetric(rng, n)
    alpha = 0.5
    worst = 0.0
    for fun, deg in ((metric_h1, 1.0), (metric_l2, 2.0 / 3.0)):
        for c in (0.1, 3.0, 250.0):
            lhs = fun(c * a, c * alpha)
            rhs = c**deg * fun(a, alpha)
            worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
    return CheckResult("metric homogeneity (1, 2/3)", worst <= 1e-12, f"max relative error {worst:.2e}")


def check_qls_exact(rng, meshes=10):
    worst = 0.0
    for _ in range(meshes):
        mesh = random_unstructured_mesh(rng, int(rng.integers(6, 12)))
        c = rng.normal(size=6)
        u = nodal_interpolant(mesh, lambda x, y: c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y)
        r = recover(mesh, u, "qls").tensors
        h = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
        worst = max(worst, float(np.abs(r - h).max()))
    return CheckResult("QLS exact on quadratics", worst <= 1e-9, f"max error {worst:.2e} on {meshes} meshes")


def linear_tolerance(mesh, values, rtol=1e-12):
    """Roundoff scale for recovered second derivatives of data ``values``."""
    e = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    hmin = float(np.sqrt((e**2).sum(1)).min())
    return rtol * max(1.0, float(np.abs(values).max())) / hmin**2


def check_linear_zero(rng, meshes=5):
    worst = 0.0
    for _ in range(meshes):
        mesh = random_unstructured_mesh(rng, int(rng.integers(5, 10)))
        c = rng.normal(size=3)
        u = nodal_interpolant(mesh, lambda x, y: c[0] + c[1] * x + c[2] * y)
        tol = linear_tolerance(mesh, u.values)
        for m in METHODS:
            worst = max(worst, float(np.abs(recover(mesh, u, m).tensors).max()) / tol)
    return CheckResult("linear fields recover to zero", worst <= 1.0, f"max |R| / tolerance = {worst:.2e}")


def check_ceq_mean(rng, n):
    mesh = random_triangles(rng, n)
    c = mesh_quality(mesh, random_spd(rng, mesh.n_elements)).c_eq_per_element
    err = abs(float(c.mean()) - 1.0)
    return CheckResult("mean c_eq = 1", err <= 1e-12, f"|mean - 1| = {err:.2e}")


def check_bisection(rng, fields=20):
    worst = 0.0
    for _ in range(fields):
        mesh = random_unstructured_mesh(rng, 6)
        rk = random_symmetric(rng, mesh.n_elements, scale=float(np.exp(rng.uniform(-2, 4))))
        alpha = solve_alpha_h(mesh, rk)
        lhs, rhs = alpha_h_equation(mesh.areas, rk, alpha)
        worst = max(worst, abs(lhs - rhs) / rhs)
    return CheckResult("alpha_h bisection residual", worst < 1e-8, f"max relative residual {worst:.2e}")


def _adapt_bytes():
    mesh = structured_mesh(6)
    x = mesh.centroids[:, 0]
    lam = np.stack([4.0 + 40.0 * x, 4.0 + 0 * x], -1)
    metric = MetricField(np.einsum("ki,ij->kij", lam, np.eye(2)), 0.0)
    metric = scale_metric_to_target(mesh, metric, 300)
    out = adapt_mesh(mesh, metric, AdaptParams(target_n=300)).mesh
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.mesh")
        write_mesh(out, path)
        with open(path, "rb") as fh:
            return fh.read()


def check_determinism():
    a, b = _adapt_bytes(), _adapt_bytes()
    return CheckResult("deterministic remeshing", a == b, f"{len(a)} bytes, identical={a == b}")


def run_checks(samples: int = 10_000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_am_gm(rng, samples),
        check_inverse_alignment(rng, samples),
        check_abs_sym(rng, samples),
        check_homogeneity(rng, samples),
        check_qls_exact(rng),
        check_linear_zero(rng),
        check_ceq_mean(rng, samples),
        check_bisection(rng),
        check_determinism(),
    ]


def report(results) -> str:
    buf = io.StringIO()
    for r in results:
        print(r.line(), file=buf)
    return buf.getvalue()


if __name__ == "__main__":
    t0 = time.perf_counter()
    print(report(run_checks()), end="")
    print(f"{time.perf_counter() - t0:.1f} s")
