"""Bundled test functions ``U(t, x)``.

The boundary exemplars are C^1 with second derivatives blowing up like
``d^{-1/2}`` at the distance ``d`` from the boundary.
"""

from __future__ import annotations

import numpy as np

from .boundary import affine_surface, constant_surface
from .mollify import TestFunction


def _zeros(t, x):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))


def constant(c: float = 1.0, dim: int = 1) -> TestFunction:
    return TestFunction(
        dim,
        lambda t, x: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]), float(c)),
        _zeros,
        lambda t, x: np.zeros(np.shape(x)),
        lambda t, x: np.zeros(np.shape(x) + (dim,)),
        name="constant", smooth=True,
    )


def linear(a=(1.0,), c: float = 0.0) -> TestFunction:
    """``U = a . x + c t``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    m = a.size
    return TestFunction(
        m,
        lambda t, x: np.asarray(x) @ a + c * np.asarray(t),
        lambda t, x: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]), float(c)),
        lambda t, x: np.broadcast_to(a, np.shape(x)),
        lambda t, x: np.zeros(np.shape(x) + (m,)),
        name="linear", smooth=True,
    )


def square() -> TestFunction:
    """``U = x^2`` in one dimension."""
    return TestFunction(
        1,
        lambda t, x: np.asarray(x)[..., 0] ** 2,
        _zeros,
        lambda t, x: 2.0 * np.asarray(x),
        lambda t, x: np.full(np.shape(x) + (1,), 2.0),
        name="square", smooth=True,
    )


def cross(i: int = 0, j: int = 1, dim: int = 2) -> TestFunction:
    """``U = x_i x_j``."""

    def grad(t, x):
        g = np.zeros(np.shape(x))
        g[..., i] += x[..., j]
        g[..., j] += x[..., i]
        return g

    def hess(t, x):
        h = np.zeros(np.shape(x) + (dim,))
        h[..., i, j] += 1.0
        h[..., j, i] += 1.0
        return h

    return TestFunction(dim, lambda t, x: x[..., i] * x[..., j], _zeros, grad, hess,
                        name="cross", smooth=True)


def cubic() -> TestFunction:
    """``U = x1^3 + x1 x2^2 - 2 x2 + t x1`` (used for quadrature exactness)."""

    def value(t, x):
        x1, x2 = x[..., 0], x[..., 1]
        return x1 ** 3 + x1 * x2 ** 2 - 2.0 * x2 + t * x1

    def grad(t, x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([3 * x1 ** 2 + x2 ** 2 + t, 2 * x1 * x2 - 2.0 + 0 * t], axis=-1)

    def hess(t, x):
        x1, x2 = x[..., 0], x[..., 1]
        h = np.empty(np.shape(x) + (2,))
        h[..., 0, 0] = 6 * x1
        h[..., 0, 1] = h[..., 1, 0] = 2 * x2
        h[..., 1, 1] = 2 * x1
        return h

    return TestFunction(2, value, lambda t, x: x[..., 0] + 0 * t, grad, hess, name="cubic", smooth=True)


def smooth_sin() -> TestFunction:
    """``U = exp(-t) sin(x1) cos(x2)``."""

    def value(t, x):
        return np.exp(-t) * np.sin(x[..., 0]) * np.cos(x[..., 1])

    def grad(t, x):
        e = np.exp(-np.asarray(t))
        return np.stack([e * np.cos(x[..., 0]) * np.cos(x[..., 1]),
                         -e * np.sin(x[..., 0]) * np.sin(x[..., 1])], axis=-1)

    def hess(t, x):
        e = np.exp(-np.asarray(t))
        s1, c1, s2, c2 = np.sin(x[..., 0]), np.cos(x[..., 0]), np.sin(x[..., 1]), np.cos(x[..., 1])
        h = np.empty(np.shape(x) + (2,))
        h[..., 0, 0] = h[..., 1, 1] = -e * s1 * c2
        h[..., 0, 1] = h[..., 1, 0] = -e * c1 * s2
        return h

    return TestFunction(2, value, lambda t, x: -value(t, x), grad, hess, name="smooth-sin", smooth=True)


def _x32_parts(d):
    dp = np.maximum(d, 0.0)
    r = np.sqrt(dp)
    with np.errstate(divide="ignore"):
        h = np.where(d > 0, 0.75 / np.where(d > 0, r, 1.0), np.where(d == 0, np.inf, 0.0))
    return dp * r, 1.5 * r, h


def x32_boundary() -> TestFunction:
    """``U = (x+)^{3/2}``: C^1, with ``U_xx = (3/4) x^{-1/2}`` exploding at 0."""

    def hess(t, x):
        return _x32_parts(x[..., 0])[2][..., None, None]

    return TestFunction(
        1,
        lambda t, x: _x32_parts(x[..., 0])[0],
        _zeros,
        lambda t, x: _x32_parts(x[..., 0])[1][..., None],
        hess,
        surface=constant_surface(0.0, 1),
        name="x32-boundary",
    )


def x32_diagonal() -> TestFunction:
    """``U = ((x1 - x2)+)^{3/2}`` with boundary ``x1 = x2``."""

    def grad(t, x):
        g = _x32_parts(x[..., 0] - x[..., 1])[1]
        return np.stack([g, -g], axis=-1)

    def hess(t, x):
        h = _x32_parts(x[..., 0] - x[..., 1])[2]
        out = np.empty(np.shape(x) + (2,))
        out[..., 0, 0] = out[..., 1, 1] = h
        out[..., 0, 1] = out[..., 1, 0] = -h
        return out

    return TestFunction(
        2,
        lambda t, x: _x32_parts(x[..., 0] - x[..., 1])[0],
        _zeros, grad, hess,
        surface=affine_surface(0.0, [0.0, 1.0]),
        name="x32-diagonal",
    )


def quadratic_time(a: float = 1.0, c: float = 0.5) -> TestFunction:
    """``U = a x^2 + c t x`` in one dimension."""
    return TestFunction(
        1,
        lambda t, x: a * x[..., 0] ** 2 + c * t * x[..., 0],
        lambda t, x: c * x[..., 0] + 0 * t,
        lambda t, x: (2 * a * x[..., 0] + c * t)[..., None],
        lambda t, x: np.full(np.shape(x) + (1,), 2.0 * a),
        name="quadratic-time", smooth=True,
    )
