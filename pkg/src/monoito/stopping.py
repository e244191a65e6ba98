"""Finite-horizon optimal stopping on tensor grids (m = 1, 2).

The value ``U(t, x) = sup_tau E[exp(-int r) G(t + tau, X_tau)]`` is computed by
a backward implicit sweep; every time level is a discrete obstacle problem
solved by projected SOR.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .boundary import MonotoneSurface, RegionLabel, classify, tabulated_surface, verify_monotone
from .kernels import psor
from .sde import BVDriverSpec, DiffusionSpec, Ensemble, PathRecord, simulate_ensemble, uniform_grid

TOL_GAP = 1e-7
PSOR_OMEGA = 1.5
PSOR_TOL = 1e-8
PSOR_MAX_ITER = 100_000
L_WINDOW = 0.9


class MultiFlipError(ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"continuation mask flips more than once in column {column}")


@dataclass(frozen=True)
class StoppingProblem:
    """Gain ``G``, discount rate ``r`` (number or callable ``r(t, x)``), horizon and dynamics.

    ``split``/``orientation`` describe where the continuation set is expected
    to lie relative to the boundary (``'above'``: ``C = {x_split > b}``).
    ``gain_c12`` declares ``G`` twice differentiable everywhere; the supplied
    derivatives are otherwise trusted only on the stopping set.
    """

    gain: Callable
    horizon: float
    dynamics: DiffusionSpec
    rate: float | Callable = 0.0
    driver: BVDriverSpec = field(default_factory=BVDriverSpec.zero)
    gain_t: Callable | None = None
    gain_x: Callable | None = None
    gain_xx: Callable | None = None
    gain_c12: bool = False
    split: int = 0
    orientation: str = "above"
    name: str = "custom"

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not callable(self.rate) and self.rate < 0:
            raise ValueError("a constant discount rate must be >= 0")

    @property
    def dim(self) -> int:
        return self.dynamics.dim

    @property
    def constant_rate(self) -> bool:
        return not callable(self.rate)

    def G(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.gain(t, x), dtype=float),
                               np.broadcast_shapes(np.shape(t), x.shape[:-1]))

    def r(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), x.shape[:-1])
        if callable(self.rate):
            return np.broadcast_to(np.asarray(self.rate(t, x), dtype=float), shape)
        return np.full(shape, float(self.rate))

    def _need(self, name):
        f = getattr(self, name)
        if f is None:
            raise ValueError(f"problem {self.name!r} does not provide {name}")
        return f

    def H(self, t, x):
        """``G_t + 1/2 sum beta G_xx + sum alpha G_x - r G``."""
        x = np.asarray(x, dtype=float)
        gt = self._need("gain_t")(t, x)
        gx = np.broadcast_to(self._need("gain_x")(t, x), x.shape)
        gxx = np.broadcast_to(self._need("gain_xx")(t, x), x.shape + (self.dim,))
        b = self.dynamics.beta(t, x)
        a = self.dynamics.drift(t, x)
        return (gt + 0.5 * np.sum(b * gxx, axis=(-2, -1)) + np.sum(a * gx, axis=-1)
                - self.r(t, x) * self.G(t, x))


@dataclass(frozen=True)
class StoppingGrid:
    bounds: tuple
    n_x: tuple
    n_t: int

    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.n_x)]

    def times(self, T):
        return np.linspace(0.0, float(T), int(self.n_t) + 1)


@dataclass
class ValueField:
    problem: StoppingProblem
    t: np.ndarray
    axes: list
    U: np.ndarray
    G: np.ndarray
    iterations: list
    tol_gap: float = TOL_GAP

    @property
    def mask(self) -> np.ndarray:
        """True on the continuation set ``U > G + tol_gap``."""
        return self.U > self.G + self.tol_gap

    @property
    def spacing(self):
        return [float(a[1] - a[0]) for a in self.axes]

    def gap_interpolator(self):
        return RegularGridInterpolator([self.t, *self.axes], self.U - self.G, bounds_error=False,
                                       fill_value=None)

    def value_at(self, t, x) -> np.ndarray:
        interp = RegularGridInterpolator([self.t, *self.axes], self.U)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        return interp(np.column_stack([t.ravel(), x.reshape(-1, x.shape[-1])])).reshape(x.shape[:-1])

    @property
    def stopping_set(self) -> np.ndarray:
        """Stopping nodes attached to the stopping side of each column.

        Trailing runs at the far edge, where ``U - G`` only drops below the
        tolerance because both are negligible, count as continuation.
        """
        cols = _columns(self.mask, self.problem)
        _, first_c = self.column_structure()
        d = np.arange(cols.shape[-1]) < first_c[..., None]
        if self.problem.orientation == "below":
            d = d[..., ::-1]
        return np.moveaxis(d, -1, 1 + self.problem.split)

    def column_structure(self):
        """Per-column mask analysis along the split coordinate.

        Returns ``(kind, first_c)`` arrays over columns ``(t, other axes...)``:
        ``kind`` 0 regular, 1 trailing stopping run touching the far edge,
        2 interior island; ``first_c`` is the index of the first continuation
        node counted from the stopping side (``n`` if none).
        """
        mask = _columns(self.mask, self.problem)
        n = mask.shape[-1]
        first_c = np.where(mask.any(axis=-1), np.argmax(mask, axis=-1), n)
        flips = np.count_nonzero(np.diff(mask.astype(np.int8), axis=-1), axis=-1)
        kind = np.zeros(mask.shape[:-1], dtype=np.int8)
        multi = flips > 1
        far_edge = (flips == 2) & ~mask[..., -1]
        kind[multi & far_edge] = 1
        kind[multi & ~far_edge] = 2
        return kind, first_c

    def diagnostics(self) -> dict:
        kind, _ = self.column_structure()
        return {
            "min_U_minus_G": float(np.min(self.U - self.G)),
            "island_columns": int(np.count_nonzero(kind == 2)),
            "far_edge_columns": int(np.count_nonzero(kind == 1)),
            "psor_iterations_total": int(sum(self.iterations)),
            "psor_iterations_max": int(max(self.iterations, default=0)),
        }

    def write_csv(self, stem) -> None:
        names = ["t"] + [f"x{i + 1}" for i in range(len(self.axes))]
        mesh = np.meshgrid(self.t, *self.axes, indexing="ij")
        table = np.column_stack([m.ravel() for m in mesh] + [self.U.ravel(), self.G.ravel()])
        cont = self.mask.ravel().astype(int)
        with open(f"{stem}.csv", "w", newline="") as fh:
            fh.write(",".join(names + ["U", "G", "continuation"]) + "\n")
            for row, c in zip(table, cont):
                fh.write(",".join(f"{v:.17g}" for v in row) + f",{c}\n")


def _columns(arr, problem):
    """Move the split axis last and orient so index 0 is on the stopping side."""
    a = np.moveaxis(arr, 1 + problem.split, -1)
    return a[..., ::-1] if problem.orientation == "below" else a


def _node_states(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.stack(mesh, axis=-1)
    if len(axes) == 1:
        x = x[:, None, :]
    return x


def assemble_operator(problem: StoppingProblem, t: float, axes, dt: float):
    """Stencil of ``I + dt (r - L)`` at time ``t`` in kernel layout ``(n1, n2, 3, 3)``."""
    m = problem.dim
    x = _node_states(axes)
    n1, n2 = x.shape[:2]
    alpha = problem.dynamics.drift(t, x)
    beta = problem.dynamics.beta(t, x)
    coef = np.zeros((n1, n2, 3, 3))
    coef[..., 1, 1] = 1.0 + dt * problem.r(t, x)

    for d in range(m):
        h = float(axes[d][1] - axes[d][0])
        a, b = alpha[..., d], beta[..., d, d]
        if np.any(b < -1e-14):
            raise ValueError("beta has a negative diagonal entry")
        n = x.shape[d]
        idx = np.arange(n)
        inner = ((idx > 0) & (idx < n - 1))
        inner = inner[:, None] if d == 0 else inner[None, :]
        central = b >= np.abs(a) * h
        diff = 0.5 * b / h ** 2
        lo = np.where(central, diff - 0.5 * a / h, diff + np.maximum(-a, 0.0) / h)
        up = np.where(central, diff + 0.5 * a / h, diff + np.maximum(a, 0.0) / h)
        lo = np.where(inner, lo, 0.0)
        up = np.where(inner, up, 0.0)
        # edges: no curvature; inward one-sided first derivative when the drift points
        # into the box (upwind), no convection where it points out
        first = np.zeros((n1, n2), dtype=bool)
        last = np.zeros((n1, n2), dtype=bool)
        if d == 0:
            first[0], last[-1] = True, True
        else:
            first[:, 0], last[:, -1] = True, True
        up = np.where(first, np.maximum(a, 0.0) / h, up)  # L u = a+ (u1 - u0) / h
        lo = np.where(last, np.maximum(-a, 0.0) / h, lo)  # L u = -a- (uN - uN-1) / h
        sl_lo = (slice(None), slice(None), 0, 1) if d == 0 else (slice(None), slice(None), 1, 0)
        sl_up = (slice(None), slice(None), 2, 1) if d == 0 else (slice(None), slice(None), 1, 2)
        coef[sl_lo] -= dt * lo
        coef[sl_up] -= dt * up
        coef[..., 1, 1] += dt * (lo + up)

    if m == 2:
        c = beta[..., 0, 1] / (4.0 * (axes[0][1] - axes[0][0]) * (axes[1][1] - axes[1][0]))
        inner = np.zeros((n1, n2), dtype=bool)
        inner[1:-1, 1:-1] = True
        c = np.where(inner, c, 0.0) * dt
        coef[..., 2, 2] -= c
        coef[..., 0, 0] -= c
        coef[..., 2, 0] += c
        coef[..., 0, 2] += c

    diag = np.abs(coef[..., 1, 1])
    off = np.sum(np.abs(coef), axis=(-2, -1)) - diag
    if np.any(diag < off * (1.0 - 1e-12)):
        bad = np.unravel_index(int(np.argmax(off - diag)), diag.shape)
        raise ValueError(f"operator row {bad} is not diagonally dominant; refine dt or widen the box")
    return coef


def solve_value(problem: StoppingProblem, grid: StoppingGrid, omega: float = PSOR_OMEGA, tol: float = PSOR_TOL,
                max_iter: int = PSOR_MAX_ITER, backend: str | None = None, tol_gap: float = TOL_GAP) -> ValueField:
    """Backward implicit sweep with a PSOR obstacle solve per level."""
    m = problem.dim
    if m not in (1, 2):
        raise ValueError("the grid solver handles m = 1 or 2")
    if problem.dynamics.gamma is not None and problem.driver.mode != "zero":
        raise ValueError("the PDE route needs a zero bounded-variation driver")
    if len(grid.bounds) != m:
        raise ValueError(f"grid has {len(grid.bounds)} axes for a {m}-dimensional problem")
    axes = grid.axes()
    t = grid.times(problem.horizon)
    x = _node_states(axes)
    shape = (t.size,) + x.shape[:2]
    U = np.empty(shape)
    G = np.empty(shape)
    for n in range(t.size):
        G[n] = problem.G(t[n], x)
    U[-1] = G[-1]
    its = []
    for n in range(t.size - 2, -1, -1):
        coef = assemble_operator(problem, t[n], axes, t[n + 1] - t[n])
        u, k = psor(coef, U[n + 1], G[n], U[n + 1], omega, tol, max_iter, backend)
        U[n] = u
        its.append(k)
    if m == 1:
        U, G = U[:, :, 0], G[:, :, 0]
    return ValueField(problem, t, axes, U, G, its[::-1], tol_gap)


def boundary_samples(field: ValueField):
    """Boundary level per column ``(t, other axes...)`` of the split coordinate.

    The level lies between the last stopping node and the first continuation
    node; inside that cell it is placed where the straight line through
    ``sqrt(U - G)`` at the next two continuation nodes reaches zero (the gap
    vanishes quadratically under smooth fit), clamped to the cell.
    """
    problem = field.problem
    kind, first_c = field.column_structure()
    if np.any(kind == 2):
        col = tuple(int(v) for v in np.argwhere(kind == 2)[0])
        raise MultiFlipError(col)
    ax = field.axes[problem.split]
    n = ax.size
    h = float(ax[1] - ax[0])
    coords = ax[::-1] if problem.orientation == "below" else ax
    step = -h if problem.orientation == "below" else h
    gap = _columns(field.U - field.G, problem)
    b = np.empty(first_c.shape)
    for idx in np.ndindex(first_c.shape):
        k = int(first_c[idx])
        if k >= n:
            b[idx] = coords[-1]
        elif k == 0:
            b[idx] = coords[0] - step
        else:
            s1 = np.sqrt(max(gap[idx + (k,)], 0.0))
            s2 = np.sqrt(max(gap[idx + (k + 1,)], 0.0)) if k + 1 < n else 2 * s1
            frac = 1.0 - s1 / (s2 - s1) if s2 > s1 else 0.5
            b[idx] = coords[k - 1] + step * min(max(frac, 0.0), 1.0)
    other = [field.axes[j] for j in range(problem.dim) if j != problem.split]
    return [field.t, *other], b


def _infer_directions(values):
    dirs = []
    for ax in range(values.ndim):
        d = np.diff(values, axis=ax)
        dirs.append(1 if np.sum(np.maximum(-d, 0.0)) <= np.sum(np.maximum(d, 0.0)) else -1)
    return tuple(dirs)


def extract_boundary(field: ValueField, directions=None) -> MonotoneSurface:
    """The boundary as a tabulated surface; flags inferred from the table unless given."""
    axes, b = boundary_samples(field)
    dirs = tuple(directions) if directions is not None else _infer_directions(b)
    p = field.problem
    surf = tabulated_surface(axes, b, dirs, p.split, p.orientation, name=f"boundary({p.name})")
    return surf


def surface_box(field: ValueField):
    p = field.problem
    box = [(float(field.t[0]), float(field.t[-1]))]
    box += [(float(field.axes[j][0]), float(field.axes[j][-1])) for j in range(p.dim) if j != p.split]
    return box


def verify_extracted(field: ValueField, surface: MonotoneSurface, n_samples: int = 1000, seed: int = 0):
    """Sampled monotonicity with a one-cell tolerance in the split coordinate."""
    h = field.spacing[field.problem.split]
    return verify_monotone(surface, surface_box(field), n_samples, seed, tol=h * (1 + 1e-9))


def write_boundary_csv(field: ValueField, stem) -> None:
    axes, b = boundary_samples(field)
    p = field.problem
    names = ["t"] + [f"x{j + 1}" for j in range(p.dim) if j != p.split] + ["b"]
    mesh = np.meshgrid(*axes, indexing="ij")
    with open(f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for idx in np.ndindex(b.shape):
            w.writerow([repr(float(m[idx])) for m in mesh] + [repr(float(b[idx]))])


@dataclass
class LField:
    values: np.ndarray
    sup: float
    argsup: tuple
    t_max: float

    def write_csv(self, field: ValueField, stem) -> None:
        mesh = np.meshgrid(field.t, *field.axes, indexing="ij")
        with open(f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(len(field.axes))] + ["L"])
            for idx in np.ndindex(self.values.shape):
                if np.isfinite(self.values[idx]):
                    w.writerow([repr(float(m[idx])) for m in mesh] + [repr(float(self.values[idx]))])


def l_field(field: ValueField, problem: StoppingProblem | None = None, t_window: float = L_WINDOW) -> LField:
    """``2 (r U - alpha . grad U - U_t)`` on C and ``sum beta G_xx`` on D.

    Skipped (NaN): nodes with a neighbour in the other region, spatial box
    edges and times beyond ``t_window * T``, where ``L`` blows up as the
    boundary meets the terminal payoff kink.
    """
    problem = problem or field.problem
    m = problem.dim
    U = field.U
    t = field.t
    tt = t.reshape((-1,) + (1,) * m)
    mesh = np.meshgrid(*field.axes, indexing="ij")
    x = np.broadcast_to(np.stack(mesh, axis=-1)[None], U.shape + (m,))
    tb = np.broadcast_to(tt, U.shape)
    grads = np.gradient(U, t, *field.axes)
    ut, ux = grads[0], np.stack(grads[1:], axis=-1)
    alpha = problem.dynamics.drift(tb, x)
    on_c = 2.0 * (problem.r(tb, x) * U - np.sum(alpha * ux, axis=-1) - ut)
    gxx = np.broadcast_to(problem._need("gain_xx")(tb, x), x.shape + (m,))
    on_d = np.sum(problem.dynamics.beta(tb, x) * gxx, axis=(-2, -1))
    mask = field.mask
    L = np.where(mask, on_c, on_d)
    skip = np.zeros(U.shape, dtype=bool)
    for ax in range(1, m + 1):
        sl = [slice(None)] * U.ndim
        lo, hi = list(sl), list(sl)
        lo[ax], hi[ax] = slice(None, -1), slice(1, None)
        flip = mask[tuple(lo)] != mask[tuple(hi)]
        skip[tuple(lo)] |= flip
        skip[tuple(hi)] |= flip
        e0, e1 = list(sl), list(sl)
        e0[ax], e1[ax] = 0, -1
        skip[tuple(e0)] = True
        skip[tuple(e1)] = True
    t_max = t_window * problem.horizon
    skip |= np.broadcast_to(tt > t_max + 1e-12, U.shape)
    L = np.where(skip, np.nan, L)
    absL = np.where(np.isfinite(L), np.abs(L), -1.0)
    k = np.unravel_index(int(np.argmax(absL)), L.shape)
    return LField(L, float(absL[k]), tuple(int(v) for v in k), float(t_max))


def _gap_region(region):
    if isinstance(region, ValueField):
        # far-edge runs are lifted out of the stopping set, matching the extracted boundary
        gap = np.where(region.stopping_set, region.U - region.G, np.maximum(region.U - region.G, 1.0))
        interp = RegularGridInterpolator([region.t, *region.axes], gap, bounds_error=False, fill_value=None)
        lo = np.array([region.t[0]] + [a[0] for a in region.axes])
        hi = np.array([region.t[-1]] + [a[-1] for a in region.axes])
        tol = region.tol_gap

        def in_d(t, x):
            x = np.asarray(x, dtype=float)
            pts = np.concatenate([np.broadcast_to(np.asarray(t, float)[..., None], x.shape[:-1] + (1,)), x], axis=-1)
            pts = np.clip(pts, lo, hi)
            return interp(pts.reshape(-1, pts.shape[-1])).reshape(x.shape[:-1]) <= tol
        return in_d
    if isinstance(region, MonotoneSurface):
        return lambda t, x: classify(region, t, x) == RegionLabel.D
    raise TypeError("region must be a ValueField or a MonotoneSurface")


def first_entry_index(region, grid, x) -> np.ndarray:
    """Index of the first grid time with the state in the stopping set (``N`` if none)."""
    in_d = _gap_region(region)
    grid = np.asarray(grid, dtype=float)
    hit = np.asarray(in_d(grid, x), dtype=bool)
    N = grid.size - 1
    return np.where(hit.any(axis=-1), np.argmax(hit, axis=-1), N)


def first_entry_time(region, path: PathRecord) -> float:
    """First grid time of ``path`` in the stopping set; the horizon if none."""
    return float(path.grid[int(first_entry_index(region, path.grid, path.x))])


# --- boundary monotonicity conditions -----------------------------------------

def _pair_dirs(f, box, axis, n, rng):
    """Worst violation of non-decreasing and of non-increasing along ``axis``."""
    box = np.asarray(box, dtype=float)
    pts = rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))
    u = np.sort(rng.uniform(box[axis, 0], box[axis, 1], size=(n, 2)), axis=1)
    lo, hi = pts.copy(), pts.copy()
    lo[:, axis], hi[:, axis] = u[:, 0], u[:, 1]
    d = f(hi) - f(lo)
    d = np.where(np.isfinite(d), d, 0.0)
    return float(np.max(np.maximum(-d, 0.0), initial=0.0)), float(np.max(np.maximum(d, 0.0), initial=0.0))


def _direction(f, box, axis, n, rng, tol):
    """+1, -1, 0 (constant) or None (not monotone) along ``axis`` on samples."""
    inc_viol, dec_viol = _pair_dirs(f, box, axis, n, rng)
    if inc_viol <= tol and dec_viol <= tol:
        return 0
    if inc_viol <= tol:
        return 1
    if dec_viol <= tol:
        return -1
    return None


@dataclass
class MonotonicityReport:
    refused: str | None = None
    checks: dict = field(default_factory=dict)
    applies: dict = field(default_factory=dict)
    predicted: dict = field(default_factory=dict)

    def to_dict(self):
        return {"refused": self.refused, "checks": self.checks, "applies": self.applies,
                "predicted": self.predicted}

    def agrees_with(self, surface: MonotoneSurface) -> dict:
        """Per predicted argument: does the surface flag match the prediction?"""
        names = ["t"] + [f"x{j}" for j in surface.others]
        out = {}
        for name, d in self.predicted.items():
            if d is not None and name in names:
                out[name] = surface.directions[names.index(name)] == d
        return out


def check_monotonicity_conditions(problem: StoppingProblem, sample_box, n_samples: int = 2000,
                                  seed: int = 0, tol: float = 1e-10) -> MonotonicityReport:
    """Sample the hypotheses of the boundary-monotonicity results.

    ``sample_box`` gives ``(lo, hi)`` for ``t`` and each state coordinate.
    Two routes are tried. The first needs constant ``r``, time-homogeneous
    coefficients and gain, a gain depending on the split coordinate only and
    monotone in it, and decoupled dynamics; it predicts the ``t`` direction
    and, from the monotonicity of the split drift in ``x_j``, the ``x_j``
    directions. The second (orientation ``'above'``, ``G`` in ``C^{1,2}``)
    reads directions off the monotonicity of ``H`` (and of ``G_x`` when the
    bounded-variation driver is active).
    """
    rep = MonotonicityReport()
    if not problem.constant_rate:
        rep.refused = "state-dependent discount rate: the results assume a constant r"
        return rep
    rng = np.random.default_rng(seed)
    m, k = problem.dim, problem.split
    box = np.asarray(sample_box, dtype=float)
    n = int(n_samples)
    others = [j for j in range(m) if j != k]
    spec = problem.dynamics

    def on(fn):
        return lambda p: fn(p[:, 0], p[:, 1:])

    a_split = on(lambda t, x: spec.drift(t, x)[..., k])
    s_split = [on(lambda t, x, c=c: spec.diffusion(t, x)[..., k, c]) for c in range(m)]
    G = on(problem.G)
    c = rep.checks
    c["G_time_homogeneous"] = _direction(G, box, 0, n, rng, tol) == 0
    c["coefficients_time_homogeneous"] = all(
        _direction(on(lambda t, x, i=i: spec.drift(t, x)[..., i]), box, 0, n, rng, tol) == 0 for i in range(m)
    ) and all(_direction(on(lambda t, x, i=i, j=j: spec.diffusion(t, x)[..., i, j]), box, 0, n, rng, tol) == 0
              for i in range(m) for j in range(m))
    c["G_depends_on_split_only"] = all(_direction(G, box, 1 + j, n, rng, tol) == 0 for j in others)
    dG = _direction(G, box, 1 + k, n, rng, tol)
    c["G_split_direction"] = dG
    c["split_diffusion_depends_on_split_only"] = all(
        _direction(f, box, 1 + j, n, rng, tol) == 0 for f in s_split for j in others)
    c["others_independent_of_split"] = all(
        _direction(on(lambda t, x, i=i: spec.drift(t, x)[..., i]), box, 1 + k, n, rng, tol) == 0
        and all(_direction(on(lambda t, x, i=i, q=q: spec.diffusion(t, x)[..., i, q]), box, 1 + k, n, rng, tol)
                == 0 for q in range(m))
        for i in others)
    c["driver_zero"] = problem.driver.mode == "zero"
    alpha_dirs = {f"x{j}": _direction(a_split, box, 1 + j, n, rng, tol) for j in others}
    c["alpha_split_directions"] = alpha_dirs

    sign = 1 if problem.orientation == "above" else -1
    pred: dict = {"t": None, **{f"x{j}": None for j in others}}

    base = c["G_time_homogeneous"] and c["coefficients_time_homogeneous"]
    rep.applies["time_homogeneous"] = bool(base)
    if base:
        pred["t"] = sign
    homog_route = (base and c["G_depends_on_split_only"] and dG not in (None, 0)
                   and c["split_diffusion_depends_on_split_only"] and c["others_independent_of_split"]
                   and c["driver_zero"])
    rep.applies["split_gain_comparison"] = bool(homog_route)
    if homog_route:
        for j in others:
            dj = alpha_dirs[f"x{j}"]
            if dj is None:
                continue
            s = dG * dj
            pred[f"x{j}"] = 0 if s == 0 else (-s if sign > 0 else s)

    h_route = problem.gain_c12 and problem.orientation == "above" and all(
        getattr(problem, a) is not None for a in ("gain_t", "gain_x", "gain_xx"))
    rep.applies["H_route"] = bool(h_route)
    if h_route:
        Hf = on(problem.H)
        Hdirs = [_direction(Hf, box, ax, n, rng, tol) for ax in range(m + 1)]
        c["H_directions"] = Hdirs
        bv = not c["driver_zero"]
        gx_dirs = []
        if bv:
            gx_dirs = [[_direction(on(lambda t, x, i=i: problem.gain_x(t, x)[..., i]), box, ax, n, rng, tol)
                        for ax in range(m + 1)] for i in range(m)]
            c["G_x_directions"] = gx_dirs
            c["gamma_nonnegative"] = bool(np.all(spec.loading(
                box[0, 0], rng.uniform(box[1:, 0], box[1:, 1], size=(n, m))) >= 0))
        ok_bv = (not bv) or c.get("gamma_nonnegative", False)
        t_ok = Hdirs[0] in (0, -1) and ok_bv and (not bv or all(g[0] in (0, -1) for g in gx_dirs))
        rep.applies["H_time"] = bool(t_ok)
        if t_ok and pred["t"] is None:
            pred["t"] = 1
        for j in others:
            dj = alpha_dirs[f"x{j}"]
            if dj in (None, 0):
                continue
            hj = Hdirs[1 + j]
            ok = Hdirs[1 + k] in (0, 1) and hj in (0, dj) and ok_bv
            if bv:
                ok = ok and all(g[1 + k] in (0, 1) and g[1 + j] in (0, dj) for g in gx_dirs)
            rep.applies[f"H_x{j}"] = bool(ok)
            if ok and pred[f"x{j}"] is None:
                pred[f"x{j}"] = -dj
    rep.predicted = pred
    return rep


# --- Dynkin identity -------------------------------------------------------------

@dataclass
class DynkinReport:
    lhs_mean: float
    rhs_mean: float
    difference: float
    se: float
    n_paths: int
    jump_line_error: float = 0.0

    @property
    def passed(self) -> bool:
        if self.se == 0.0:
            return abs(self.difference) <= 1e-12 * max(1.0, abs(self.lhs_mean))
        return abs(self.difference) <= 3.0 * self.se

    def to_dict(self):
        return {"lhs_mean": self.lhs_mean, "rhs_mean": self.rhs_mean, "difference": self.difference,
                "se": self.se, "n_paths": self.n_paths, "passed": self.passed,
                "jump_line_error": self.jump_line_error}


def dynkin_check(problem: StoppingProblem, rule, x0, n_paths: int, seed: int, n_steps: int = 1000,
                 t0: float = 0.0, ensemble: Ensemble | None = None) -> DynkinReport:
    """Monte Carlo test of ``E[D_tau G(t0 + tau, X_tau)] = G(t0, x0) + E[int D H ds + BV + jumps]``.

    ``D`` is the discount factor ``exp(-int r)``. ``rule`` is a fixed time
    ``tau`` in ``[0, T - t0]`` or a stopping region (``ValueField`` or
    ``MonotoneSurface``) whose first entry time is used. Jump corrections are
    discounted like the other terms.
    """
    spec = problem.dynamics
    T = problem.horizon - t0
    if ensemble is None:
        ens = simulate_ensemble(spec, problem.driver, x0, uniform_grid(T, n_steps), seed, n_paths)
    else:
        ens = ensemble
    g = ens.grid
    N = g.size - 1
    P = len(ens)
    ts = t0 + g
    if isinstance(rule, (int, float)):
        tau = float(rule)
        if not 0.0 <= tau <= T + 1e-12:
            raise ValueError("tau must lie in [0, T - t0]")
        k_tau = np.full(P, int(np.argmin(np.abs(g - tau))))
    else:
        k_tau = first_entry_index(rule, ts, ens.x)
    x = ens.x
    xk = x[:, :-1]
    tl = ts[:-1]
    r = problem.r(tl, xk)
    dts = np.diff(g)
    logdisc = np.concatenate([np.zeros((P, 1)), -np.cumsum(r * dts, axis=1)], axis=1)
    disc = np.exp(logdisc)
    keep = np.arange(N)[None, :] < k_tau[:, None]
    h_int = np.sum(np.where(keep, disc[:, :-1] * problem.H(tl, xk) * dts, 0.0), axis=1)
    bv = 0.0
    if problem.driver.mode != "zero":
        gx = np.broadcast_to(problem._need("gain_x")(tl, xk), xk.shape)
        bv = np.sum(np.where(keep, disc[:, :-1] * np.sum(spec.loading(tl, xk) * gx * ens.da_c, axis=-1), 0.0),
                    axis=1)
    jumps = 0.0
    line_err = 0.0
    has_jump = np.any(ens.da_jump != 0.0, axis=-1)
    if np.any(has_jump):
        tr = ts[1:]
        jv = problem.G(tr, x[:, 1:]) - problem.G(tr, ens.x_left[:, 1:])
        w = disc[:, 1:]
        jumps = np.sum(np.where(keep & has_jump, w * jv, 0.0), axis=1)
        if problem.gain_x is not None:
            s, wq = np.polynomial.legendre.leggauss(16)
            s, wq = 0.5 * (s + 1.0), 0.5 * wq
            ks = np.flatnonzero(has_jump[0]) if has_jump.ndim == 2 else np.flatnonzero(has_jump)
            for kj in ks:
                xm, xp = ens.x_left[:, kj + 1], x[:, kj + 1]
                step = xp - xm
                pts = xm[:, None, :] + s[None, :, None] * step[:, None, :]
                grads = np.broadcast_to(problem.gain_x(tr[kj], pts), pts.shape)
                line = np.einsum("pqi,pi,q->p", grads, step, wq)
                line_err = max(line_err, float(np.max(np.abs(line - jv[:, kj]))))
    rows = np.arange(P)
    lhs = disc[rows, k_tau] * problem.G(ts[k_tau], x[rows, k_tau])
    g0 = float(problem.G(t0, np.asarray(x0, dtype=float)[None])[0])
    rhs = g0 + h_int + bv + jumps
    d = lhs - rhs
    se = float(np.std(d, ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return DynkinReport(float(np.mean(lhs)), float(np.mean(rhs)), float(np.mean(d)), se, P, line_err)
