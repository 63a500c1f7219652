"""Registered model problems with hand-differentiated data."""

from __future__ import annotations

import numpy as np

from .fem import Problem

UNIT_SQUARE = (0.0, 1.0, 0.0, 1.0)
CENTERED_SQUARE = (-1.0, 1.0, -1.0, 1.0)

# Bump centres of the flower solution. The last centre repeats the fourth one;
# ``flower_fix_typo`` swaps it for the missing lower-left bump.
FLOWER_CENTERS = ((0.0, 0.0), (0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, 0.5))
FLOWER_CENTERS_FIXED = FLOWER_CENTERS[:4] + ((-0.5, -0.5),)
FLOWER_STEEPNESS = 30.0
FLOWER_RADIUS2 = 0.125

TANH_STEEPNESS = 60.0


def _stack_grad(gx, gy):
    return np.stack(np.broadcast_arrays(gx, gy), axis=-1)


def _stack_hess(hxx, hxy, hyy):
    hxx, hxy, hyy = np.broadcast_arrays(hxx, hxy, hyy)
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def quad_problem() -> Problem:
    """``u = x^2 + 25 y^2`` on the unit square; constant Hessian ``diag(2, 50)``."""

    def u(x, y):
        return np.asarray(x) ** 2 + 25.0 * np.asarray(y) ** 2

    def f(x, y):
        return np.full(np.broadcast(x, y).shape, -52.0)

    def grad(x, y):
        return _stack_grad(2.0 * np.asarray(x), 50.0 * np.asarray(y))

    def hess(x, y):
        shape = np.broadcast(x, y).shape
        return _stack_hess(np.full(shape, 2.0), np.zeros(shape), np.full(shape, 50.0))

    return Problem(f=f, g=u, u_exact=u, grad_exact=grad, hess_exact=hess, name="quad", domain=UNIT_SQUARE)


def flower_problem(fix_typo: bool = False) -> Problem:
    """Sum of five ``tanh(30 (r_i^2 - 0.125))`` rings on ``(-1, 1)^2``."""
    centers = FLOWER_CENTERS_FIXED if fix_typo else FLOWER_CENTERS
    k = FLOWER_STEEPNESS

    def terms(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        for cx, cy in centers:
            dx, dy = x - cx, y - cy
            t = np.tanh(k * (dx * dx + dy * dy - FLOWER_RADIUS2))
            yield dx, dy, t, 1.0 - t * t

    def u(x, y):
        return sum(t for _, _, t, _ in terms(x, y))

    def grad(x, y):
        gx = gy = 0.0
        for dx, dy, _, s in terms(x, y):
            gx = gx + 2.0 * k * dx * s
            gy = gy + 2.0 * k * dy * s
        return _stack_grad(gx, gy)

    def hess(x, y):
        hxx = hxy = hyy = 0.0
        for dx, dy, t, s in terms(x, y):
            c = -2.0 * t * s * (2.0 * k) ** 2
            hxx = hxx + c * dx * dx + 2.0 * k * s
            hxy = hxy + c * dx * dy
            hyy = hyy + c * dy * dy + 2.0 * k * s
        return _stack_hess(hxx, hxy, hyy)

    def f(x, y):
        lap = 0.0
        for dx, dy, t, s in terms(x, y):
            lap = lap - 2.0 * t * s * (2.0 * k) ** 2 * (dx * dx + dy * dy) + 4.0 * k * s
        return -lap

    name = "flower_fixed" if fix_typo else "flower"
    return Problem(f=f, g=u, u_exact=u, grad_exact=grad, hess_exact=hess, name=name, domain=CENTERED_SQUARE)


def tanh_problem(domain=UNIT_SQUARE) -> Problem:
    """``u = tanh(60 y) - tanh(60 (x - y) - 30)``: a boundary layer along ``y = 0`` and a
    shock along ``y = x - 1/2``. Defaults to the unit square, where ``y = 0`` is a boundary."""
    k = TANH_STEEPNESS

    def parts(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t1 = np.tanh(k * y)
        t2 = np.tanh(k * (x - y) - 30.0)
        return t1, 1.0 - t1 * t1, t2, 1.0 - t2 * t2

    def u(x, y):
        t1, _, t2, _ = parts(x, y)
        return t1 - t2

    def grad(x, y):
        _, s1, _, s2 = parts(x, y)
        return _stack_grad(-k * s2, k * s1 + k * s2)

    def hess(x, y):
        t1, s1, t2, s2 = parts(x, y)
        c = 2.0 * k * k
        return _stack_hess(c * t2 * s2, -c * t2 * s2, -c * t1 * s1 + c * t2 * s2)

    def f(x, y):
        t1, s1, t2, s2 = parts(x, y)
        c = 2.0 * k * k
        return c * t1 * s1 - 2.0 * c * t2 * s2

    return Problem(f=f, g=u, u_exact=u, grad_exact=grad, hess_exact=hess, name="tanh", domain=tuple(domain))


PROBLEMS = ("quad", "flower", "tanh")


def get_problem(name: str, flower_fix_typo: bool = False) -> Problem:
    name = name.lower()
    if name == "quad":
        return quad_problem()
    if name == "flower":
        return flower_problem(fix_typo=flower_fix_typo)
    if name == "tanh":
        return tanh_problem()
    raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEMS}")


def registry(flower_fix_typo: bool = False) -> list[Problem]:
    return [get_problem(n, flower_fix_typo) for n in PROBLEMS]
