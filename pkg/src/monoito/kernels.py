"""Projected SOR kernels for discrete obstacle problems on 1-D/2-D grids.

The operator at every node is a 3x3 stencil stored as ``coef[i, j, a, b]``,
the weight of ``u[i + a - 1, j + b - 1]`` (out-of-grid weights must be zero).
One-dimensional problems use arrays of shape ``(n, 1)``.

Two interchangeable backends:

* ``numba``: lexicographic Gauss-Seidel sweep, compiled with ``@njit``.
* ``numpy``: four-colour ordering; nodes of one colour never touch through a
  3x3 stencil, so each colour is relaxed as one vectorised update.

Both converge to the same complementarity solution; iterates differ.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, default_backend, njit


class PSORNotConverged(RuntimeError):
    pass


@njit(cache=True)
def _psor_lexicographic(coef, rhs, obstacle, u, omega, tol, max_iter):
    n1, n2 = u.shape
    for it in range(max_iter):
        err = 0.0
        for i in range(n1):
            for j in range(n2):
                s = rhs[i, j]
                for a in range(3):
                    ii = i + a - 1
                    if ii < 0 or ii >= n1:
                        continue
                    for b in range(3):
                        jj = j + b - 1
                        if jj < 0 or jj >= n2 or (a == 1 and b == 1):
                            continue
                        s -= coef[i, j, a, b] * u[ii, jj]
                old = u[i, j]
                new = old + omega * (s / coef[i, j, 1, 1] - old)
                if new < obstacle[i, j]:
                    new = obstacle[i, j]
                d = abs(new - old)
                if d > err:
                    err = d
                u[i, j] = new
        if err < tol:
            return it + 1
    return -1


def _psor_multicolor(coef, rhs, obstacle, u, omega, tol, max_iter):
    n1, n2 = u.shape
    up = np.zeros((n1 + 2, n2 + 2))
    up[1:-1, 1:-1] = u
    colors = [(p, q) for p in (0, 1) for q in (0, 1) if p < n1 and q < n2]
    blocks = []
    for p, q in colors:
        c = coef[p::2, q::2]
        blocks.append((p, q, c, rhs[p::2, q::2], obstacle[p::2, q::2], c[:, :, 1, 1]))
    for it in range(max_iter):
        err = 0.0
        for p, q, c, f, g, diag in blocks:
            ni, nj = f.shape
            s = f.copy()
            for a in range(3):
                for b in range(3):
                    if a == 1 and b == 1:
                        continue
                    s -= c[:, :, a, b] * up[p + a:p + a + 2 * ni:2, q + b:q + b + 2 * nj:2]
            cur = up[p + 1:p + 1 + 2 * ni:2, q + 1:q + 1 + 2 * nj:2]
            new = np.maximum(cur + omega * (s / diag - cur), g)
            err = max(err, float(np.max(np.abs(new - cur))))
            up[p + 1:p + 1 + 2 * ni:2, q + 1:q + 1 + 2 * nj:2] = new
        if err < tol:
            u[:, :] = up[1:-1, 1:-1]
            return it + 1
    u[:, :] = up[1:-1, 1:-1]
    return -1


def psor(coef, rhs, obstacle, u0, omega=1.5, tol=1e-8, max_iter=100_000, backend=None):
    """Solve ``min(A u - rhs, u - obstacle) = 0`` by projected SOR.

    Returns ``(u, iterations)``; ``u0`` is not modified.
    """
    backend = backend or default_backend()
    coef = np.ascontiguousarray(coef, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    obstacle = np.ascontiguousarray(obstacle, dtype=float)
    u = np.maximum(np.array(u0, dtype=float, copy=True), obstacle)
    if coef.shape != u.shape + (3, 3) or rhs.shape != u.shape or obstacle.shape != u.shape:
        raise ValueError(f"shape mismatch: coef {coef.shape}, rhs {rhs.shape}, u {u.shape}")
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        its = _psor_lexicographic(coef, rhs, obstacle, u, float(omega), float(tol), int(max_iter))
    elif backend == "numpy":
        its = _psor_multicolor(coef, rhs, obstacle, u, float(omega), float(tol), int(max_iter))
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if its < 0:
        raise PSORNotConverged(f"PSOR did not reach tol={tol:g} within {max_iter} iterations")
    return u, int(its)
