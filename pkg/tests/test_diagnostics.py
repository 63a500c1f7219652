import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessadapt.checks import random_spd, random_symmetric, random_triangles
from hessadapt.fem import Problem
from hessadapt.geometry import Mesh, structured_mesh
from hessadapt.metric import H1, L2
from hessadapt.diagnostics import (
    bound_factor,
    cr_constants,
    epsilon_closeness,
    inverse_alignment_check,
    mesh_quality,
    recovery_error_max,
)
from hessadapt.problems import flower_problem, quad_problem, tanh_problem
from hessadapt.recovery import element_average, exact_nodal_hessian


def _const(n, t):
    return np.broadcast_to(np.asarray(t, float), (n, 2, 2)).copy()


def _const_hess_problem(t):
    t = np.asarray(t, float)

    def hess(x, y):
        return np.broadcast_to(t, np.broadcast(x, y).shape + (2, 2)).copy()

    zero = lambda x, y: 0 * np.asarray(x, float)
    return Problem(f=zero, g=zero, hess_exact=hess)


def _equilateral_strip():
    # Two congruent unit-area equilateral triangles sharing an edge.
    s = 2.0 / 3.0**0.25
    h = 3.0**0.25
    pts = [[0, 0], [s, 0], [s / 2, h], [1.5 * s, h]]
    return Mesh(pts, [[0, 1, 2], [1, 3, 2]])


def test_equilateral_quality_is_one():
    mesh = _equilateral_strip()
    rep = mesh_quality(mesh, _const(2, np.eye(2)))
    assert np.allclose(rep.c_eq_per_element, 1.0)
    assert np.allclose(rep.c_ali_per_element, 1.0, atol=1e-14)
    assert inverse_alignment_check(mesh, _const(2, np.eye(2)), rep.c_ali).all()


def test_right_triangle_alignment_closed_form():
    # ||F'||_F^2 for the right-isoceles image of the reference is 2/sqrt(3)
    # and |K| = 1/2, so c_ali = 2/sqrt(3).
    rep = mesh_quality(structured_mesh(1), _const(2, np.eye(2)))
    assert np.allclose(rep.c_eq_per_element, 1.0)
    assert np.allclose(rep.c_ali_per_element, 2.0 / math.sqrt(3.0), rtol=1e-13)


def test_alignment_equality_iff_equal_eigenvalues():
    mesh = structured_mesh(1)
    # M = F'^-T F'^-1 makes F'^T M F' the identity.
    jinv = np.linalg.inv(mesh.jacobians)
    m = np.einsum("kji,kjl->kil", jinv, jinv)
    assert np.allclose(mesh_quality(mesh, m).c_ali_per_element, 1.0, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_quality_properties(seed):
    rng = np.random.default_rng(seed)
    mesh = random_triangles(rng, 200)
    m = random_spd(rng, mesh.n_elements)
    rep = mesh_quality(mesh, m)
    assert np.all(rep.c_ali_per_element >= 1 - 1e-12)
    assert abs(rep.c_eq_per_element.mean() - 1) < 1e-12
    ok, lhs, rhs = inverse_alignment_check(mesh, m, rep.c_ali, return_sides=True)
    assert ok.all()
    # with the per-element constant the inequality still holds
    assert np.all(lhs < 2 * rep.c_ali_per_element * rhs / (2 * rep.c_ali))


def test_eps_examples():
    mesh = structured_mesh(1)
    same = _const(2, np.diag([3.0, -1.0]))
    assert epsilon_closeness(mesh, same, same, 0.5, 0.5).eps == 0.0
    rep = epsilon_closeness(mesh, _const(2, np.diag([2.0, 2.0])), _const(2, np.diag([4.0, 2.0])), 0.0, 0.0)
    assert rep.eps == pytest.approx(1.0)
    with pytest.raises(ValueError):
        epsilon_closeness(mesh, same, same, 0.0, 0.0, norm="fro")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, np.pi))
def test_eps_invariances(seed, theta):
    rng = np.random.default_rng(seed)
    mesh = structured_mesh(2)
    n = mesh.n_elements
    r, h = random_symmetric(rng, n), random_symmetric(rng, n)
    c, s = math.cos(theta), math.sin(theta)
    q = np.array([[c, -s], [s, c]])
    rot = lambda t: q @ t @ q.T
    base = epsilon_closeness(mesh, r, h, 1.0, 0.7, norm="2").eps_per_element
    turned = epsilon_closeness(mesh, rot(r), rot(h), 1.0, 0.7, norm="2").eps_per_element
    assert np.allclose(base, turned, rtol=1e-10)
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    base = epsilon_closeness(mesh, r, h, 1.0, 0.7).eps_per_element
    swapped = epsilon_closeness(mesh, p @ r @ p, p @ h @ p, 1.0, 0.7).eps_per_element
    assert np.allclose(base, swapped, rtol=1e-12)


def test_cr_uniform_refinement_example():
    mesh = structured_mesh(3)
    rep = cr_constants(mesh, _const(mesh.n_elements, np.eye(2)), _const_hess_problem(np.diag([2.0, 50.0])), 0.0)
    assert rep.cr_plus == pytest.approx(50.0)
    assert rep.cr_minus == pytest.approx(2.0)
    assert rep.ratio == pytest.approx(25.0)


def test_cr_matched_hessian():
    mesh = structured_mesh(2)
    h = np.array([[3.0, 1.0], [1.0, 5.0]])
    rep = cr_constants(mesh, _const(mesh.n_elements, h), _const_hess_problem(h), 0.0)
    assert rep.cr_plus == pytest.approx(1.0)
    assert rep.cr_minus == pytest.approx(1.0)
    reg = cr_constants(mesh, _const(mesh.n_elements, h), _const_hess_problem(h), 2.0)
    assert reg.cr_plus < 1.0
    assert reg.cr_minus == pytest.approx(1.0)


def test_cr_spread_shrinks_under_refinement():
    def hess(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        z = np.zeros_like(x)
        return np.stack([np.stack([np.exp(x), z], -1), np.stack([z, np.exp(2 * y)], -1)], -2)

    zero = lambda x, y: 0 * np.asarray(x, float)
    p = Problem(f=zero, g=zero, hess_exact=hess)
    deltas = []
    for k in (2, 4, 8, 16):
        mesh = structured_mesh(k)
        rk = element_average(mesh, exact_nodal_hessian(mesh, p)).tensors
        rep = cr_constants(mesh, rk, p, 0.0)
        d = max(np.abs(rep.cr_plus_per_element - 1).max(), np.abs(rep.cr_minus_per_element - 1).max())
        deltas.append(d)
    assert all(b < a for a, b in zip(deltas, deltas[1:]))


def test_bound_factor_examples():
    mesh = structured_mesh(2)
    assert bound_factor(quad_problem(), mesh, 0.0, H1) == pytest.approx(500.0, rel=1e-12)
    assert bound_factor(quad_problem(), mesh, 0.0, L2) == pytest.approx(500.0, rel=1e-12)
    zero = _const_hess_problem(np.zeros((2, 2)))
    for a in (0.5, 3.0):
        assert bound_factor(zero, mesh, a, H1) == pytest.approx(a * a, rel=1e-12)
        assert bound_factor(zero, mesh, a, L2) == pytest.approx(a * a, rel=1e-12)


@pytest.mark.parametrize("problem", [flower_problem(), tanh_problem()], ids=["flower", "tanh"])
def test_bound_factor_hoelder_ordering(problem):
    x0, x1, y0, y1 = problem.domain
    mesh = structured_mesh(24, bounds=(x0, x1, y0, y1))
    for a in (0.0, 1.0, 10.0):
        assert bound_factor(problem, mesh, a, H1) <= bound_factor(problem, mesh, a, L2) * (1 + 1e-12)


def test_recovery_error_max_zero_for_exact_constant():
    mesh = structured_mesh(3)
    assert recovery_error_max(mesh, _const(mesh.n_elements, np.diag([2.0, 50.0])), quad_problem()) == 0.0
