"""Symmetric 6-point triangle quadrature, exact for polynomials of degree 4."""

from __future__ import annotations

import numpy as np

_A1, _W1 = 0.44594849091596488632, 0.22338158967801146570
_A2, _W2 = 0.09157621350977074346, 0.10995174365532186764

# Barycentric coordinates of the points; weights sum to one (multiply by |K|).
BARYCENTRIC = np.array(
    [
        [1 - 2 * _A1, _A1, _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [_A1, _A1, 1 - 2 * _A1],
        [1 - 2 * _A2, _A2, _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [_A2, _A2, 1 - 2 * _A2],
    ]
)
WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


def quadrature_points(mesh):
    """Physical quadrature points ``(nt, 6, 2)`` and the reference weights ``(6,)``."""
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qi,kid->kqd", BARYCENTRIC, p), WEIGHTS
