import math

import numpy as np
import pytest
import sympy as sp

from hessadapt.problems import (
    FLOWER_CENTERS,
    FLOWER_CENTERS_FIXED,
    PROBLEMS,
    get_problem,
    registry,
)

X, Y = sp.symbols("x y", real=True)


def _symbolic(name, fix_typo=False):
    if name == "quad":
        return X**2 + 25 * Y**2
    if name.startswith("flower"):
        centers = FLOWER_CENTERS_FIXED if fix_typo else FLOWER_CENTERS
        r = sp.Rational(1, 8)
        return sum(sp.tanh(30 * ((X - sp.nsimplify(cx)) ** 2 + (Y - sp.nsimplify(cy)) ** 2 - r)) for cx, cy in centers)
    return sp.tanh(60 * Y) - sp.tanh(60 * (X - Y) - 30)


CASES = [("quad", False), ("flower", False), ("flower", True), ("tanh", False)]


@pytest.mark.parametrize("name,fix", CASES)
def test_derivatives_match_sympy(name, fix):
    p = get_problem(name, fix)
    u = _symbolic(name, fix)
    grad = [sp.diff(u, v) for v in (X, Y)]
    hess = [[sp.diff(u, a, b) for b in (X, Y)] for a in (X, Y)]
    lap = hess[0][0] + hess[1][1]
    fn = sp.lambdify((X, Y), [u, grad, hess, -lap], "numpy")
    x0, x1, y0, y1 = p.domain
    rng = np.random.default_rng(11)
    pts = np.column_stack([rng.uniform(x0, x1, 200), rng.uniform(y0, y1, 200)])
    for x, y in pts:
        ue, ge, he, fe = fn(x, y)
        scale = 1.0 + np.abs(he).max()
        assert p.u_exact(x, y) == pytest.approx(ue, abs=1e-12)
        assert np.allclose(p.grad_exact(x, y), ge, atol=1e-10 * scale)
        assert np.allclose(p.hess_exact(x, y), he, atol=1e-10 * scale)
        assert p.f(x, y) == pytest.approx(fe, abs=1e-10 * scale)
        assert p.g(x, y) == pytest.approx(ue, abs=1e-12)


def test_vectorised_shapes():
    for p in registry():
        x = np.zeros((4, 3))
        assert np.shape(p.u_exact(x, x)) == (4, 3)
        assert np.shape(p.f(x, x)) == (4, 3)
        assert np.shape(p.grad_exact(x, x)) == (4, 3, 2)
        assert np.shape(p.hess_exact(x, x)) == (4, 3, 2, 2)


def test_point_values():
    assert np.allclose(get_problem("quad").hess_exact(0.3, 0.7), np.diag([2.0, 50.0]))
    flower = get_problem("flower")
    assert flower.u_exact(0.0, 0.0) == pytest.approx(math.tanh(-3.75) + 4 * math.tanh(11.25), abs=1e-14)
    assert get_problem("tanh").u_exact(0.0, 0.0) == pytest.approx(math.tanh(30.0), abs=1e-15)


def test_flower_duplicate_centre_verbatim():
    assert FLOWER_CENTERS[3] == FLOWER_CENTERS[4] == (-0.5, 0.5)
    assert (-0.5, -0.5) in FLOWER_CENTERS_FIXED
    assert get_problem("flower", True).name == "flower_fixed"


def test_domains_and_registry():
    assert [p.name for p in registry()] == list(PROBLEMS)
    assert get_problem("quad").domain == (0.0, 1.0, 0.0, 1.0)
    assert get_problem("flower").domain == (-1.0, 1.0, -1.0, 1.0)
    assert get_problem("tanh").domain == (0.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        get_problem("poisson")
