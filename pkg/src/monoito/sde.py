"""Euler-Maruyama simulation of SDEs driven by Brownian motion and a
bounded-variation process.

    dX = alpha(t, X-) dt + sigma(t, X-) dB + gamma(t, X-) dA

Coefficient callables are vectorised: ``f(t, x)`` receives ``x`` of shape
``(..., m)`` and ``t`` either scalar or broadcastable against ``x[..., 0]``.
``alpha`` and ``gamma`` return ``(..., m)``, ``sigma`` returns ``(..., m, m)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

Coef = Callable[[Any, np.ndarray], np.ndarray]

BLOWUP_LEVEL = 1e30


class SimulationBlowUp(RuntimeError):
    def __init__(self, time: float, path_index: int | None = None):
        self.time = float(time)
        self.path_index = path_index
        where = "" if path_index is None else f" on path {path_index}"
        super().__init__(f"state blew up at t={self.time:.6g}{where}")


def _zero_vector(t, x):
    return np.zeros(np.shape(x))


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of the SDE. ``name``/``params`` identify built-ins for hashing."""

    dim: int
    alpha: Coef
    sigma: Coef
    gamma: Coef | None = None
    name: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    lipschitz_hints: Mapping[str, str] | None = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dim must be a positive integer")

    def drift(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.alpha(t, x), dtype=float), x.shape)

    def diffusion(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.sigma(t, x), dtype=float), x.shape + (self.dim,))

    def loading(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.gamma is None:
            return np.zeros(x.shape)
        return np.broadcast_to(np.asarray(self.gamma(t, x), dtype=float), x.shape)

    def beta(self, t, x):
        """``sigma @ sigma.T`` pointwise, shape ``(..., m, m)``."""
        s = self.diffusion(t, x)
        return np.einsum("...ik,...jk->...ij", s, s)

    def spec_hash(self) -> str:
        payload = json.dumps({"name": self.name, "dim": self.dim, "params": dict(self.params)},
                             sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Reflection:
    """Keep ``x[index]`` on ``side`` ('above' or 'below') of ``threshold``."""

    index: int
    threshold: float
    side: str = "above"

    def __post_init__(self):
        if self.side not in ("above", "below"):
            raise ValueError("reflection side must be 'above' or 'below'")
        if self.threshold is None or not np.isfinite(self.threshold):
            raise ValueError("reflection needs a finite threshold")


@dataclass(frozen=True)
class BVDriverSpec:
    """The bounded-variation driver ``A``.

    ``mode='schedule'`` is deterministic: scheduled jumps ``(time, dA)`` plus
    an optional continuous rate ``dA^c/dt`` (constant vector or callable of
    ``t``). ``mode='reflection'`` builds ``A`` as the Skorokhod compensator;
    it is non-decreasing and path dependent.
    """

    mode: str = "zero"
    jumps: tuple = ()
    rate: Any = None
    reflection: Reflection | None = None

    def __post_init__(self):
        if self.mode not in ("zero", "schedule", "reflection"):
            raise ValueError(f"unknown driver mode {self.mode!r}")
        if self.mode == "reflection" and self.reflection is None:
            raise ValueError("reflection mode needs a Reflection(index, threshold, side)")
        if self.mode != "schedule" and (self.jumps or self.rate is not None):
            raise ValueError("jumps/rate are only meaningful in schedule mode")
        for tj, _ in self.jumps:
            if not tj > 0:
                raise ValueError("jump times must be > 0 (A_0 = 0)")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def schedule(cls, jumps=(), rate=None):
        jumps = tuple(sorted((float(t), tuple(np.atleast_1d(np.asarray(d, dtype=float)).tolist()))
                             for t, d in jumps))
        return cls("schedule", jumps=jumps, rate=rate)

    @classmethod
    def reflect(cls, index, threshold, side="above"):
        return cls("reflection", reflection=Reflection(int(index), float(threshold), side))

    @property
    def jump_times(self):
        return np.array([t for t, _ in self.jumps], dtype=float)

    def continuous_rate(self, t, m):
        if self.rate is None:
            return np.zeros(m)
        r = self.rate(t) if callable(self.rate) else self.rate
        return np.broadcast_to(np.asarray(r, dtype=float), (m,))

    def to_dict(self):
        d: dict[str, Any] = {"mode": self.mode}
        if self.mode == "schedule":
            d["jumps"] = [[t, list(v)] for t, v in self.jumps]
            if self.rate is not None:
                d["rate"] = "callable" if callable(self.rate) else np.asarray(self.rate, float).tolist()
        if self.reflection is not None:
            r = self.reflection
            d["reflection"] = {"index": r.index, "threshold": r.threshold, "side": r.side}
        return d


def uniform_grid(T: float, n_steps: int) -> np.ndarray:
    if not T > 0 or int(n_steps) < 1:
        raise ValueError("need T > 0 and n_steps >= 1")
    return np.linspace(0.0, float(T), int(n_steps) + 1)


def merge_jump_times(grid, driver: BVDriverSpec) -> np.ndarray:
    """Insert scheduled jump times into ``grid`` (jumps must fall in (0, T])."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and start at 0")
    jt = driver.jump_times
    if jt.size == 0:
        return grid
    if jt.max() > grid[-1]:
        raise ValueError("scheduled jump after the end of the grid")
    tol = 1e-12 * grid[-1]
    extra = [t for t in jt if np.min(np.abs(grid - t)) > tol]
    return np.unique(np.concatenate([grid, extra])) if extra else grid


def _jump_increments(grid, driver, m):
    """``(N, m)`` jump sizes; row k is the jump applied at ``grid[k + 1]``."""
    da = np.zeros((grid.size - 1, m))
    tol = 1e-12 * grid[-1]
    for t, v in driver.jumps:
        k = int(np.argmin(np.abs(grid - t)))
        if abs(grid[k] - t) > tol:
            raise ValueError(f"jump at t={t} is not a grid point; use merge_jump_times")
        da[k - 1] += np.broadcast_to(np.asarray(v, dtype=float), (m,))
    return da


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of path ``index`` in an ensemble, independent of execution order."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def brownian_increments(seed: int, grid, m: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(int(seed)))
    dt = np.diff(np.asarray(grid, dtype=float))
    return rng.standard_normal((dt.size, m)) * np.sqrt(dt)[:, None]


def _matvec(mat, vec):
    # explicit accumulation order keeps results independent of batch shape
    out = mat[..., :, 0] * vec[..., None, 0]
    for j in range(1, vec.shape[-1]):
        out = out + mat[..., :, j] * vec[..., None, j]
    return out


def integrate(spec: DiffusionSpec, driver: BVDriverSpec, x0, grid, db, path_offset: int = 0):
    """Run the Euler recursion for a batch of paths with given Brownian increments.

    ``db`` has shape ``(P, N, m)``. Returns ``(x, x_left, da_c, da_jump)`` with
    ``x``/``x_left`` of shape ``(P, N + 1, m)``. For deterministic drivers the
    BV increments are ``(N, m)`` arrays shared by all paths.
    """
    m = spec.dim
    grid = np.asarray(grid, dtype=float)
    db = np.asarray(db, dtype=float)
    P, N = db.shape[0], grid.size - 1
    if db.shape != (P, N, m):
        raise ValueError(f"db must have shape (P, {N}, {m}), got {db.shape}")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (m,))
    dts = np.diff(grid)

    if driver.mode == "schedule":
        da_c = np.stack([driver.continuous_rate(grid[k], m) * dts[k] for k in range(N)])
        da_jump = _jump_increments(grid, driver, m)
    else:
        da_c = np.zeros((P, N, m)) if driver.mode == "reflection" else np.zeros((N, m))
        da_jump = np.zeros((N, m))
    jump_steps = np.flatnonzero(np.any(da_jump != 0.0, axis=1))
    refl = driver.reflection

    x = np.empty((P, N + 1, m))
    x[:, 0] = x0
    x_left = np.array(x, copy=True) if jump_steps.size else x
    jumpset = set(jump_steps.tolist())

    for k in range(N):
        t, dt = grid[k], dts[k]
        xk = x[:, k]
        y = xk + spec.drift(t, xk) * dt + _matvec(spec.diffusion(t, xk), db[:, k])
        if driver.mode == "schedule":
            if np.any(da_c[k] != 0.0):
                y = y + spec.loading(t, xk) * da_c[k]
        elif refl is not None:
            g = spec.loading(t, xk)[:, refl.index]
            yi = y[:, refl.index]
            push = np.maximum(refl.threshold - yi, 0.0) if refl.side == "above" \
                else np.maximum(yi - refl.threshold, 0.0)
            need = push > 0.0
            ok = g > 0.0 if refl.side == "above" else g < 0.0
            if np.any(need & ~ok):
                raise ValueError("reflection needs gamma > 0 (side 'above') or < 0 ('below') "
                                 f"on coordinate {refl.index}")
            dA = np.where(need, push / np.where(ok, np.abs(g), 1.0), 0.0)
            da_c[:, k, refl.index] = dA
            y = np.array(y, copy=True)
            y[:, refl.index] = yi + g * dA
        if x_left is not x:
            x_left[:, k + 1] = y
        if k in jumpset:
            y = y + spec.loading(grid[k + 1], y) * da_jump[k]
        x[:, k + 1] = y
        bad = ~np.all(np.isfinite(y) & (np.abs(y) < BLOWUP_LEVEL), axis=-1)
        if np.any(bad):
            raise SimulationBlowUp(grid[k + 1], path_offset + int(np.flatnonzero(bad)[0]))
    return x, x_left, da_c, da_jump


@dataclass(frozen=True)
class PathRecord:
    """One simulated path.

    Row ``k`` of the increment arrays belongs to the step ``(t_k, t_{k+1}]``;
    ``da_jump[k]`` is the jump applied at ``t_{k+1}``. ``x_left`` equals ``x``
    except at jump times, where it holds the pre-jump state.
    """

    grid: np.ndarray
    x: np.ndarray
    x_left: np.ndarray
    db: np.ndarray
    da_c: np.ndarray
    da_jump: np.ndarray
    seed: int | None = None
    total_variation: float = 0.0

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def jump_steps(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.da_jump != 0.0, axis=1))

    @property
    def jumps(self):
        return [(float(self.grid[k + 1]), self.da_jump[k].copy()) for k in self.jump_steps]

    def truncated(self, k: int) -> PathRecord:
        """The path restricted to ``grid[: k + 1]``."""
        k = int(k)
        return PathRecord(self.grid[:k + 1], self.x[:k + 1], self.x_left[:k + 1], self.db[:k],
                          self.da_c[:k], self.da_jump[:k], self.seed,
                          _total_variation(self.da_c[:k], self.da_jump[:k]))


def _total_variation(da_c, da_jump):
    return float(np.sum(np.abs(da_c)) + np.sum(np.abs(da_jump)))


class Ensemble(Sequence):
    """Paths sharing a grid, stored as stacked arrays; indexing yields PathRecords."""

    def __init__(self, grid, x, x_left, db, da_c, da_jump, seeds, master_seed=None):
        self.grid = grid
        self.x = x
        self.x_left = x_left
        self.db = db
        P, N, m = db.shape
        self.da_c = da_c if da_c.ndim == 3 else np.broadcast_to(da_c, (P, N, m))
        self.da_jump = np.broadcast_to(da_jump, (P, N, m))
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.master_seed = master_seed

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        k = range(len(self))[k]
        da_c, da_j = self.da_c[k], self.da_jump[k]
        return PathRecord(self.grid, self.x[k], self.x_left[k], self.db[k], da_c, da_j,
                          int(self.seeds[k]), _total_variation(da_c, da_j))

    @property
    def terminal(self) -> np.ndarray:
        return self.x[:, -1]


def _check_coefficients_finite(spec, x0, t0=0.0):
    x0 = np.asarray(x0, dtype=float)[None, :]
    for name, val in (("alpha", spec.drift(t0, x0)), ("sigma", spec.diffusion(t0, x0)),
                      ("gamma", spec.loading(t0, x0))):
        if not np.all(np.isfinite(val)):
            raise ValueError(f"{name} is not finite at the initial state")


def simulate_path(spec: DiffusionSpec, driver: BVDriverSpec, x0, grid, seed: int) -> PathRecord:
    """Simulate one path. Scheduled jump times are inserted into ``grid``."""
    grid = merge_jump_times(grid, driver)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (spec.dim,))
    _check_coefficients_finite(spec, x0)
    db = brownian_increments(seed, grid, spec.dim)[None]
    x, xl, da_c, da_j = integrate(spec, driver, x0, grid, db)
    if da_c.ndim == 3:
        da_c = da_c[0]
    return PathRecord(grid, x[0], xl[0], db[0], da_c, da_j, int(seed), _total_variation(da_c, da_j))


def simulate_ensemble(spec: DiffusionSpec, driver: BVDriverSpec, x0, grid, master_seed: int,
                      n_paths: int) -> Ensemble:
    """``n_paths`` paths; path ``k`` uses the stream seeded by ``derive_seed(master_seed, k)``."""
    if int(n_paths) < 1:
        raise ValueError("n_paths must be >= 1")
    grid = merge_jump_times(grid, driver)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (spec.dim,))
    _check_coefficients_finite(spec, x0)
    seeds = [derive_seed(master_seed, k) for k in range(int(n_paths))]
    db = np.stack([brownian_increments(s, grid, spec.dim) for s in seeds])
    x, xl, da_c, da_j = integrate(spec, driver, x0, grid, db)
    return Ensemble(grid, x, xl, db, da_c, da_j, seeds, master_seed)


def replay(path: PathRecord, spec: DiffusionSpec, driver: BVDriverSpec) -> bool:
    """True when re-running the recursion on the stored noise reproduces the path bitwise."""
    db = path.db[None]
    if path.seed is not None:
        fresh = brownian_increments(path.seed, path.grid, spec.dim)
        if not np.array_equal(fresh, path.db):
            return False
    x, xl, da_c, da_j = integrate(spec, driver, path.x[0], path.grid, db)
    da_c = da_c[0] if da_c.ndim == 3 else da_c
    return (np.array_equal(x[0], path.x) and np.array_equal(xl[0], path.x_left)
            and np.array_equal(da_c, path.da_c) and np.array_equal(da_j, path.da_jump))


@dataclass(frozen=True)
class IntegrabilityReport:
    bv_integral: float
    ds_integral: float
    passed: bool

    @property
    def total(self) -> float:
        return self.bv_integral + self.ds_integral


def check_integrability(path: PathRecord, spec: DiffusionSpec) -> IntegrabilityReport:
    """Discretised ``int sum|gamma| d|A| + int (sum|alpha| + sum|sigma|^2) ds``.

    The ``d|A|`` part uses left-point integrands (pre-jump state at jumps); the
    ``ds`` part is the trapezoid rule on the stored states.
    """
    g, x = path.grid, path.x
    if path.n_steps == 0:
        return IntegrabilityReport(0.0, 0.0, True)
    t_left = g[:-1]
    gam = np.abs(spec.loading(t_left, x[:-1]))
    bv = float(np.sum(gam * np.abs(path.da_c)))
    js = path.jump_steps
    if js.size:
        gj = np.abs(spec.loading(g[js + 1], path.x_left[js + 1]))
        bv += float(np.sum(gj * np.abs(path.da_jump[js])))
    a = np.sum(np.abs(spec.drift(g, x)), axis=-1)
    s = np.sum(spec.diffusion(g, x) ** 2, axis=(-2, -1))
    f = a + s
    ds = float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(g)))
    return IntegrabilityReport(bv, ds, bool(np.isfinite(bv) and np.isfinite(ds)))


def write_path(path: PathRecord, stem, spec: DiffusionSpec | None = None,
               driver: BVDriverSpec | None = None) -> None:
    """Write ``<stem>.csv`` (one row per grid time) and ``<stem>.json`` (header).

    Row ``k`` carries the increments of the step ending at ``t_k`` (zeros at k=0).
    """
    m = path.dim
    cols = (["t"] + [f"X{i + 1}" for i in range(m)] + [f"Xleft{i + 1}" for i in range(m)]
            + [f"dB{i + 1}" for i in range(m)] + [f"dAc{i + 1}" for i in range(m)]
            + [f"dAjump{i + 1}" for i in range(m)])
    z = np.zeros((1, m))
    inc = [np.vstack([z, a]) for a in (path.db, path.da_c, path.da_jump)]
    table = np.column_stack([path.grid, path.x, path.x_left] + inc)
    with open(f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    header = {
        "dim": m,
        "seed": path.seed,
        "n_steps": path.n_steps,
        "horizon": path.horizon,
        "total_variation": path.total_variation,
        "spec_hash": spec.spec_hash() if spec is not None else None,
        "spec": {"name": spec.name, "params": dict(spec.params)} if spec is not None else None,
        "driver": driver.to_dict() if driver is not None else None,
    }
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True, default=repr)


def read_path(stem) -> PathRecord:
    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    m = header["dim"]
    table = np.loadtxt(f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
    grid = table[:, 0]
    x = table[:, 1:1 + m]
    xl = table[:, 1 + m:1 + 2 * m]
    db, da_c, da_j = (table[1:, 1 + k * m:1 + (k + 1) * m] for k in (2, 3, 4))
    return PathRecord(grid, x, xl, db, da_c, da_j, header["seed"], header["total_variation"])
