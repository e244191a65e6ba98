"""Forward cube-average regularisation of C^1 functions.

``U^n(t, x) = n^m * int_{[x, x + 1/n]^m} U(t, z) dz`` evaluated with a
tensor-product Gauss-Legendre rule. Second derivatives use the face
difference of first derivatives, so they are defined across the boundary
where ``U`` itself has no second derivative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .boundary import MonotoneSurface, in_band

MAX_DIM = 4


class DomainError(ValueError):
    pass


class ExclusionBandError(ValueError):
    """Raised when a Hessian-based quantity is requested on the boundary band."""


class IncompleteTestFunction(ValueError):
    pass


@dataclass(frozen=True)
class TestFunction:
    """``U`` with its first derivatives and, off the boundary, its Hessian.

    All callables take ``(t, x)`` with ``x`` of shape ``(..., m)``:
    ``value`` and ``grad_t`` return ``(...)``, ``grad_x`` returns ``(..., m)``
    and ``hess`` returns ``(..., m, m)``.
    """

    __test__ = False  # not a pytest class

    dim: int
    value: Callable
    grad_t: Callable
    grad_x: Callable
    hess: Callable | None = None
    surface: MonotoneSurface | None = None
    domain: tuple | None = None
    name: str = "custom"
    smooth: bool = False  # C^{1,2} everywhere, no exploding derivatives

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.value(t, x), dtype=float), x.shape[:-1])

    def dt(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.grad_t(t, x), dtype=float), x.shape[:-1])

    def dx(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.grad_x(t, x), dtype=float), x.shape)

    def dxx(self, t, x):
        if self.hess is None:
            raise IncompleteTestFunction(f"test function {self.name!r} has no Hessian")
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.hess(t, x), dtype=float), x.shape + (self.dim,))


@dataclass(frozen=True)
class MollifierConfig:
    n: int
    quad_nodes: int = 4

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if int(self.quad_nodes) < 2:
            raise ValueError("quad_nodes must be >= 2")


@lru_cache(maxsize=64)
def _tensor_rule(q: int, d: int):
    s, w = np.polynomial.legendre.leggauss(q)
    u, w = 0.5 * (s + 1.0), 0.5 * w
    if d == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([u] * d), indexing="ij")
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def _prepare(f: TestFunction, cfg: MollifierConfig, t, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != f.dim:
        raise ValueError(f"expected points with last axis {f.dim}, got {x.shape}")
    if f.dim > MAX_DIM:
        raise ValueError(f"tensor quadrature is capped at m <= {MAX_DIM}")
    h = 1.0 / cfg.n
    if f.domain is not None:
        lo = np.array([r[0] for r in f.domain])
        hi = np.array([r[1] for r in f.domain])
        if np.any(x < lo) or np.any(x + h > hi):
            raise DomainError("cube [x, x + 1/n]^m leaves the test function's domain")
    t = np.asarray(t, dtype=float)
    return np.broadcast_to(t, np.broadcast_shapes(t.shape, x.shape[:-1])), x, h


def mollify_value(f: TestFunction, cfg: MollifierConfig, t, x):
    t, x, h = _prepare(f, cfg, t, x)
    nodes, w = _tensor_rule(cfg.quad_nodes, f.dim)
    pts = x[..., None, :] + h * nodes
    return f(t[..., None], pts) @ w


def mollify_grad(f: TestFunction, cfg: MollifierConfig, t, x):
    """Cube averages of ``U_t`` and of the spatial gradient."""
    t, x, h = _prepare(f, cfg, t, x)
    nodes, w = _tensor_rule(cfg.quad_nodes, f.dim)
    pts = x[..., None, :] + h * nodes
    tt = t[..., None]
    gt = f.dt(tt, pts) @ w
    gx = np.einsum("...qi,q->...i", f.dx(tt, pts), w)
    return gt, gx


def _face_difference(f, cfg, t, x, i, h):
    """``n * avg_face [grad U(x_i + h, z) - grad U(x_i, z)]``, all components j."""
    m = f.dim
    nodes, w = _tensor_rule(cfg.quad_nodes, m - 1)
    rest = [k for k in range(m) if k != i]
    pts = np.repeat(x[..., None, :], w.size, axis=-2)
    pts[..., rest] += h * nodes
    hi = pts.copy()
    hi[..., i] += h
    tt = t[..., None]
    d = f.dx(tt, hi) - f.dx(tt, pts)
    return np.einsum("...qj,q->...j", d, w) / h


def mollify_hess(f: TestFunction, cfg: MollifierConfig, t, x, i: int, j: int):
    """``U^n_{x_i x_j}`` in face-difference form (needs only first derivatives)."""
    t, x, h = _prepare(f, cfg, t, x)
    return _face_difference(f, cfg, t, x, int(i), h)[..., int(j)]


def mollify_hess_matrix(f: TestFunction, cfg: MollifierConfig, t, x):
    """All entries ``H[..., i, j]`` using the face in direction ``i``."""
    t, x, h = _prepare(f, cfg, t, x)
    return np.stack([_face_difference(f, cfg, t, x, i, h) for i in range(f.dim)], axis=-2)


def uniform_error(f: TestFunction, cfg: MollifierConfig, t, x):
    """``|U^n - U| + |U^n_t - U_t| + sum_i |U^n_{x_i} - U_{x_i}|`` at each point."""
    val = mollify_value(f, cfg, t, x)
    gt, gx = mollify_grad(f, cfg, t, x)
    return (np.abs(val - f(t, x)) + np.abs(gt - f.dt(t, x))
            + np.sum(np.abs(gx - f.dx(t, x)), axis=-1))


def contraction_L(f: TestFunction, beta: Callable, t, x, surface: MonotoneSurface | None = None,
                  band: float = 0.0):
    """``sum_ij beta^{ij} U_{x_i x_j}`` at points off the boundary band.

    Raises :class:`ExclusionBandError` if any point lies within ``band`` of
    ``surface`` (callers are expected to skip those points).
    """
    x = np.asarray(x, dtype=float)
    surface = surface or f.surface
    if surface is not None and np.any(in_band(surface, t, x, band)):
        raise ExclusionBandError("contraction requested inside the boundary exclusion band")
    return np.sum(np.asarray(beta(t, x)) * f.dxx(t, x), axis=(-2, -1))


def _box_points(box, points_per_axis):
    axes = [np.linspace(lo, hi, points_per_axis) if hi > lo else np.array([float(lo)]) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass
class LScanReport:
    ns: list
    maxima: list
    argmax: list
    reference_sup: float | None = None
    rows_meta: dict = field(default_factory=dict)

    @property
    def median(self) -> float:
        return float(np.median(self.maxima))

    @property
    def bounded(self) -> bool:
        """Per-n maxima admit a common bound: all within 10% of their median."""
        return max(self.maxima) <= 1.1 * self.median + 1e-300

    @property
    def no_upward_trend(self) -> bool:
        return self.maxima[-1] <= 1.1 * self.median + 1e-300

    def to_dict(self):
        return {
            "ns": list(self.ns), "maxima": list(self.maxima), "argmax": [list(a) for a in self.argmax],
            "median": self.median, "bounded": self.bounded, "no_upward_trend": self.no_upward_trend,
            "reference_sup": self.reference_sup, **self.rows_meta,
        }

    def write(self, stem) -> None:
        with open(f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "max_abs_L", "argmax"])
            for n, v, a in zip(self.ns, self.maxima, self.argmax):
                w.writerow([n, repr(float(v)), " ".join(repr(float(c)) for c in a)])
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def scan_L_bound(f: TestFunction, beta: Callable, box, ns=(4, 8, 16, 32, 64), quad_nodes: int = 4,
                 points_per_axis: int = 201, band: float = 0.0,
                 surface: MonotoneSurface | None = None) -> LScanReport:
    """Max over a grid on ``box`` of ``|sum beta^{ij}(t, x) U^n_{x_i x_j}(t, x)|`` for each n.

    ``box`` gives ``(lo, hi)`` for ``t`` then each space coordinate. Points
    within ``band`` of the boundary (or exactly on it) are excluded.
    """
    pts = _box_points(box, points_per_axis)
    t, x = pts[:, 0], pts[:, 1:]
    surface = surface or f.surface
    keep = np.ones(t.shape, dtype=bool)
    if surface is not None:
        keep = ~in_band(surface, t, x, band)
    t, x = t[keep], x[keep]
    b = np.asarray(beta(t, x))
    maxima, argmax = [], []
    for n in ns:
        H = mollify_hess_matrix(f, MollifierConfig(int(n), quad_nodes), t, x)
        L = np.abs(np.sum(b * H, axis=(-2, -1)))
        k = int(np.argmax(L))
        maxima.append(float(L[k]))
        argmax.append([float(t[k])] + [float(v) for v in x[k]])
    ref = None
    if f.hess is not None:
        ref = float(np.max(np.abs(np.sum(b * f.dxx(t, x), axis=(-2, -1)))))
    return LScanReport(list(ns), maxima, argmax, ref, {"n_points": int(t.size), "band": float(band)})
