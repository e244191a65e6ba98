"""Monotone boundary surfaces splitting the state space.

A surface ``b(t, z)`` thresholds one state coordinate (``split``) given the
others ``z`` (the state with the split coordinate removed). With orientation
``'above'`` the continuation set is ``{x_split > b}`` and the stopping set is
the closed ``{x_split <= b}``; ``'below'`` mirrors this.

Monotonicity flags are given per argument in the order ``(t, z_1, ...)``:
``+1`` non-decreasing, ``-1`` non-increasing.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

BISECTION_STEPS = 60


class RegionLabel(enum.IntEnum):
    D = 0
    C = 1
    BAND = 2


class InverseRangeError(ValueError):
    pass


@dataclass(frozen=True)
class MonotoneSurface:
    """Black-box boundary evaluator plus declared monotonicity.

    ``func(t, z)`` is vectorised: ``t`` is broadcastable against ``z[..., 0]``
    and ``z`` has shape ``(..., m - 1)``. Values may be ``+-inf``.
    """

    func: Callable
    dim: int
    directions: tuple
    split: int = 0
    orientation: str = "above"
    box: tuple | None = None
    name: str = "custom"

    def __post_init__(self):
        if len(self.directions) != self.dim:
            raise ValueError(f"need {self.dim} monotonicity flags (t and {self.dim - 1} coordinates)")
        if any(d not in (1, -1) for d in self.directions):
            raise ValueError("monotonicity flags must be +1 or -1")
        if self.orientation not in ("above", "below"):
            raise ValueError("orientation must be 'above' or 'below'")
        if not 0 <= self.split < self.dim:
            raise ValueError("split index out of range")

    @property
    def sign(self) -> int:
        return 1 if self.orientation == "above" else -1

    @property
    def others(self) -> list[int]:
        return [i for i in range(self.dim) if i != self.split]

    def __call__(self, t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        out = np.asarray(self.func(t, z), dtype=float)
        out = np.broadcast_to(out, np.broadcast_shapes(t.shape, z.shape[:-1]))
        if np.any(np.isnan(out)):
            raise ValueError(f"surface {self.name!r} returned NaN")
        return out

    def at(self, t, x):
        """Boundary level seen from full states ``x`` of shape ``(..., m)``."""
        x = np.asarray(x, dtype=float)
        return self(t, x[..., self.others])

    def signed_gap(self, t, x):
        """Positive inside the continuation set, ``<= 0`` in the stopping set."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            return self.sign * (x[..., self.split] - self.at(t, x))


def classify(surface: MonotoneSurface, t, x, band: float = 0.0):
    """Region label(s) of ``(t, x)``; with ``band=0`` this is the exact C/D split."""
    gap = surface.signed_gap(t, x)
    band = float(band)
    lab = np.where(gap > band, RegionLabel.C, np.where(gap <= -band, RegionLabel.D, RegionLabel.BAND))
    if lab.ndim == 0:
        return RegionLabel(int(lab))
    return lab.astype(np.int8)


def in_band(surface: MonotoneSurface, t, x, band: float):
    """Points within ``band`` of the boundary (always includes points on it)."""
    return np.abs(surface.signed_gap(t, x)) <= band


def constant_surface(c: float, dim: int, split: int = 0, orientation: str = "above") -> MonotoneSurface:
    def func(t, z):
        return np.full(np.broadcast_shapes(np.shape(t), np.shape(z)[:-1]), float(c))

    return MonotoneSurface(func, dim, (1,) * dim, split, orientation, name=f"constant({c})")


def affine_surface(c0: float, coefs, split: int = 0, orientation: str = "above") -> MonotoneSurface:
    """``b(t, z) = c0 + coefs[0] t + sum_k coefs[k] z_k``; flags follow coefficient signs."""
    coefs = np.asarray(coefs, dtype=float)

    def func(t, z):
        return c0 + coefs[0] * t + np.tensordot(z, coefs[1:], axes=([-1], [0]))

    dirs = tuple(1 if c >= 0 else -1 for c in coefs)
    return MonotoneSurface(func, coefs.size, dirs, split, orientation, name="affine")


def tabulated_surface(axes, values, directions, split: int = 0, orientation: str = "above",
                      name: str = "tabulated") -> MonotoneSurface:
    """Multilinear interpolation of ``values`` on the tensor grid ``axes`` = (t, z_1, ...).

    Queries outside the grid are clamped to its edges.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(a.size for a in axes):
        raise ValueError("values shape does not match the axes")
    # a length-1 axis cannot be interpolated; duplicate it
    axes_i = [a if a.size > 1 else np.array([a[0], a[0] + 1.0]) for a in axes]
    vals_i = values
    for k, a in enumerate(axes):
        if a.size == 1:
            vals_i = np.concatenate([vals_i, vals_i], axis=k)
    interp = RegularGridInterpolator(axes_i, vals_i, method="linear", bounds_error=False, fill_value=None)
    lo = np.array([a[0] for a in axes_i])
    hi = np.array([a[-1] for a in axes_i])

    def func(t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(t.shape, z.shape[:-1])
        pts = np.concatenate([np.broadcast_to(t, shape)[..., None],
                              np.broadcast_to(z, shape + (z.shape[-1],))], axis=-1)
        pts = np.clip(pts, lo, hi)
        return interp(pts.reshape(-1, len(axes))).reshape(shape)

    box = tuple((float(a[0]), float(a[-1])) for a in axes)
    surf = MonotoneSurface(func, len(axes), tuple(directions), split, orientation, box, name)
    object.__setattr__(surf, "_table", (axes, values))
    return surf


def write_tabulated_csv(surface: MonotoneSurface, path, names=None) -> None:
    axes, values = surface._table
    names = names or ["t"] + [f"z{k}" for k in range(1, len(axes))]
    mesh = np.meshgrid(*axes, indexing="ij")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + ["b"])
        for row in zip(*(g.ravel() for g in mesh), values.ravel()):
            w.writerow([repr(float(v)) for v in row])


def load_tabulated_csv(path, directions, split: int = 0, orientation: str = "above") -> MonotoneSurface:
    """Read a surface from CSV: coordinate columns (t first) then the value column."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    coords, vals = data[:, :-1], data[:, -1]
    axes = [np.unique(coords[:, k]) for k in range(coords.shape[1])]
    idx = tuple(np.searchsorted(a, coords[:, k]) for k, a in enumerate(axes))
    table = np.full(tuple(a.size for a in axes), np.nan)
    table[idx] = vals
    if np.any(np.isnan(table)):
        raise ValueError(f"{path}: coordinates do not form a full tensor grid")
    return tabulated_surface(axes, table, directions, split, orientation, name=str(path))


def shift_eps(surface: MonotoneSurface, eps: float) -> MonotoneSurface:
    """Shifted surface whose continuation set sits strictly inside the original.

    Every argument moves by ``eps`` in the direction that moves ``b`` towards
    the continuation side, and the value moves by ``eps`` the same way, so for
    orientation 'above': ``b_eps >= b + eps`` and ``b_eps`` decreases to ``b``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = surface.sign
    d = np.asarray(surface.directions, dtype=float)
    shift = s * d * eps
    base = surface.func

    def func(t, z):
        return base(np.asarray(t, dtype=float) + shift[0], np.asarray(z, dtype=float) + shift[1:]) + s * eps

    return replace(surface, func=func, name=f"{surface.name}+eps({eps:g})")


def generalized_inverse(surface: MonotoneSurface, i: int, lo: float, hi: float) -> MonotoneSurface:
    """Re-parametrise the same boundary as a threshold in coordinate ``i``.

    Returns a surface splitting on ``i`` with arguments ``(t, x without i)``.
    If ``b`` is non-decreasing in ``x_i`` (orientation 'above') the result is
    ``sup{x_i : x_split > b}`` and the continuation set becomes ``{x_i < b_i}``;
    the non-increasing case uses the infimum. Evaluated by bisection on
    ``[lo, hi]``; ``+-inf`` is returned when the section is full or empty on
    that range.
    """
    m = surface.dim
    if i == surface.split or not 0 <= i < m:
        raise ValueError("i must be a state coordinate other than the split one")
    if not lo < hi:
        raise ValueError("need lo < hi")
    k_old = surface.others.index(i)          # position of x_i among old arguments
    d_i = surface.directions[1 + k_old]
    new_sign = -surface.sign * d_i            # +1: C = {x_i > b_i}
    new_others = [j for j in range(m) if j != i]

    # old C indicator as a function of x_i with the rest fixed must be monotone:
    # new_sign=-1 -> C for small x_i (sup form); +1 -> C for large x_i (inf form)
    def func(t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(t.shape, z.shape[:-1])
        t = np.broadcast_to(t, shape)
        full = np.empty(shape + (m,))
        full[..., new_others] = np.broadcast_to(z, shape + (m - 1,))

        def inside(xi):
            full[..., i] = xi
            return surface.signed_gap(t, full) > 0.0

        a = np.full(shape, float(lo))
        b = np.full(shape, float(hi))
        ca, cb = inside(a), inside(b)
        c_side_lo = new_sign < 0
        in_lo, in_hi = (ca, cb) if c_side_lo else (cb, ca)
        bad = ~in_lo & in_hi
        if np.any(bad):
            raise InverseRangeError(
                f"section in x_{i} not monotone on [{lo}, {hi}]: widen the range or check flags")
        both = ca & cb
        neither = ~ca & ~cb
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (a + b)
            cm = inside(mid)
            # keep the invariant: C at the c-side end of [a, b], not C at the other
            if c_side_lo:
                a = np.where(cm, mid, a)
                b = np.where(cm, b, mid)
            else:
                b = np.where(cm, mid, b)
                a = np.where(cm, a, mid)
        out = 0.5 * (a + b)
        full_val = np.inf if c_side_lo else -np.inf
        out = np.where(both, full_val, np.where(neither, -full_val, out))
        return out

    dirs = [0] * m
    dirs[0] = -surface.directions[0] * d_i
    for pos, j in enumerate(new_others):
        if j == surface.split:
            dirs[1 + pos] = d_i
        else:
            dirs[1 + pos] = -surface.directions[1 + surface.others.index(j)] * d_i
    return MonotoneSurface(func, m, tuple(dirs), i, "above" if new_sign > 0 else "below",
                           None, f"inverse[{i}]({surface.name})")


@dataclass
class MonotoneReport:
    violations: dict = field(default_factory=dict)
    tol: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def to_dict(self):
        return {"violations": self.violations, "worst": self.worst, "tol": self.tol, "passed": self.passed}


def _pair_violation(f, box, axis, direction, n, rng):
    box = np.asarray(box, dtype=float)
    pts = rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))
    u = rng.uniform(box[axis, 0], box[axis, 1], size=(n, 2))
    lo_pts, hi_pts = pts.copy(), pts.copy()
    lo_pts[:, axis] = u.min(axis=1)
    hi_pts[:, axis] = u.max(axis=1)
    with np.errstate(invalid="ignore"):
        diff = direction * (f(hi_pts) - f(lo_pts))
    diff = np.where(np.isnan(diff), 0.0, diff)  # inf - inf: equal extended values
    return float(np.max(np.maximum(-diff, 0.0), initial=0.0))


def verify_monotone(surface: MonotoneSurface, sample_box, n_samples: int = 1000, seed: int = 0,
                    tol: float = 0.0) -> MonotoneReport:
    """Test each declared direction on random axis-aligned pairs.

    ``sample_box`` lists ``(lo, hi)`` for ``(t, z_1, ...)``. A violation is how
    far ``b`` moved against its declared direction; ``tol`` is the pass level.
    """
    rng = np.random.default_rng(seed)
    f = lambda p: surface(p[:, 0], p[:, 1:])
    names = ["t"] + [f"x{j}" for j in surface.others]
    report = MonotoneReport(tol=float(tol))
    for axis, name in enumerate(names):
        report.violations[name] = _pair_violation(f, sample_box, axis, surface.directions[axis],
                                                  int(n_samples), rng)
    return report
