"""Term-by-term change-of-variable ledgers along simulated paths.

For step ``k`` (the interval ``(t_k, t_{k+1}]``) every integrand is taken at
the left point ``(t_k, X_{t_k})``; jump corrections use the pre-jump state
``X_{t_{k+1}-}`` stored in ``x_left``. The second-order part of the ``dt``
term is dropped whenever the left state lies in the boundary band.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .boundary import MonotoneSurface, in_band
from .mollify import IncompleteTestFunction, TestFunction
from .sde import BVDriverSpec, DiffusionSpec, Ensemble, PathRecord, derive_seed, simulate_ensemble, uniform_grid

DEFAULT_BAND = 1e-8
DEFAULT_BUDGET = 0.01
LINE_NODES = 16
TERMS = ("lhs", "term_dt", "term_bv", "term_jumps", "term_stoch", "residual")


@dataclass(frozen=True)
class ItoLedger:
    """Per-step increments of each term; totals are sums over the kept steps."""

    u_start: float
    u_end: float
    dt_steps: np.ndarray
    bv_steps: np.ndarray
    jump_steps: np.ndarray
    stoch_steps: np.ndarray
    skipped: np.ndarray
    u_path: np.ndarray
    tau: float
    budget: float = DEFAULT_BUDGET

    @property
    def n_steps(self) -> int:
        return self.dt_steps.size

    @property
    def lhs(self) -> float:
        return float(self.u_end - self.u_start)

    @property
    def term_dt(self) -> float:
        return float(np.sum(self.dt_steps))

    @property
    def term_bv(self) -> float:
        return float(np.sum(self.bv_steps))

    @property
    def term_jumps(self) -> float:
        return float(np.sum(self.jump_steps))

    @property
    def term_stoch(self) -> float:
        return float(np.sum(self.stoch_steps))

    @property
    def residual(self) -> float:
        return self.lhs - (self.term_dt + self.term_bv + self.term_jumps + self.term_stoch)

    @property
    def skipped_steps(self) -> int:
        return int(np.count_nonzero(self.skipped))

    @property
    def within_budget(self) -> bool:
        return self.n_steps == 0 or self.skipped_steps <= self.budget * self.n_steps

    def truncate(self, k: int, tau: float | None = None) -> ItoLedger:
        """The ledger of the first ``k`` steps."""
        k = int(k)
        return ItoLedger(self.u_start, float(self.u_path[k]), self.dt_steps[:k], self.bv_steps[:k],
                         self.jump_steps[:k], self.stoch_steps[:k], self.skipped[:k],
                         self.u_path[:k + 1], self.tau if tau is None else float(tau), self.budget)

    def to_dict(self):
        d = {name: getattr(self, name) for name in TERMS}
        d.update(tau=self.tau, skipped_steps=self.skipped_steps, n_steps=self.n_steps)
        return d


def _step_terms(f, spec, surface, band, t_left, dts, x, x_left, db, da_c, da_jump, t_right):
    """Vectorised step increments; leading axes of ``x`` are (paths..., steps)."""
    xk = x[..., :-1, :]
    tl = t_left
    gx = f.dx(tl, xk)
    if surface is None:
        skip = np.zeros(xk.shape[:-1], dtype=bool)
    else:
        skip = np.broadcast_to(in_band(surface, tl, xk, band), xk.shape[:-1])
    second = np.zeros(xk.shape[:-1])
    if not np.all(skip):
        if f.hess is None:
            raise IncompleteTestFunction(f"test function {f.name!r} has no Hessian for off-boundary steps")
        keep = ~skip
        tk = np.broadcast_to(tl, xk.shape[:-1])[keep]
        pts = xk[keep]
        second[keep] = 0.5 * np.sum(spec.beta(tk, pts) * f.dxx(tk, pts), axis=(-2, -1))
    drift = np.sum(spec.drift(tl, xk) * gx, axis=-1)
    dt_steps = (f.dt(tl, xk) + drift + second) * dts
    gam = spec.loading(tl, xk)
    bv_steps = np.sum(gam * gx * da_c, axis=-1)
    sig = spec.diffusion(tl, xk)
    stoch_steps = np.sum(gx * np.einsum("...ij,...j->...i", sig, db), axis=-1)
    has_jump = np.any(da_jump != 0.0, axis=-1)
    jump_steps = np.zeros(xk.shape[:-1])
    if np.any(has_jump):
        xr, xlr = x[..., 1:, :], x_left[..., 1:, :]
        jv = f(t_right, xr) - f(t_right, xlr)
        jump_steps = np.where(has_jump, jv, 0.0)
    return dt_steps, bv_steps, jump_steps, stoch_steps, skip


def assemble_ledger(f: TestFunction, surface: MonotoneSurface | None, path: PathRecord, spec: DiffusionSpec,
                    band: float = DEFAULT_BAND, budget: float = DEFAULT_BUDGET) -> ItoLedger:
    """Discretise every term of the change-of-variable formula along ``path``."""
    g = path.grid
    u_path = f(g, path.x)
    if path.n_steps == 0:
        e = np.zeros(0)
        return ItoLedger(float(u_path[0]), float(u_path[0]), e, e, e, e, e.astype(bool), u_path, 0.0, budget)
    parts = _step_terms(f, spec, surface, band, g[:-1], np.diff(g), path.x, path.x_left, path.db,
                        path.da_c, path.da_jump, g[1:])
    return ItoLedger(float(u_path[0]), float(u_path[-1]), *parts, u_path, path.horizon, budget)


@dataclass(frozen=True)
class LocalizationBox:
    """``V = [0, 1/delta] x [-1/delta, 1/delta]^m``."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def inside(self, t, x):
        r = 1.0 / self.delta
        return (np.asarray(t) >= 0) & (np.asarray(t) <= r) & np.all(np.abs(x) <= r, axis=-1)

    def exit_index(self, grid, x) -> np.ndarray:
        """First grid index outside the box (``N`` if never), per path."""
        out = ~self.inside(grid, x)
        N = grid.size - 1
        return np.where(np.any(out, axis=-1), np.argmax(out, axis=-1), N)


def localize(path: PathRecord, delta: float):
    """Stop ``path`` at the first grid time outside the box; returns ``(path, tau)``."""
    k = int(LocalizationBox(delta).exit_index(path.grid, path.x))
    return path.truncated(k), float(path.grid[k])


@dataclass
class EnsembleLedger:
    """Per-path totals of each ledger term."""

    lhs: np.ndarray
    term_dt: np.ndarray
    term_bv: np.ndarray
    term_jumps: np.ndarray
    term_stoch: np.ndarray
    skipped_steps: np.ndarray
    tau: np.ndarray
    n_steps: int
    budget: float = DEFAULT_BUDGET

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - (self.term_dt + self.term_bv + self.term_jumps + self.term_stoch)

    def __len__(self):
        return self.lhs.size

    def stats(self) -> dict:
        r = self.residual
        n = r.size
        se = float(np.std(r, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return {
            "n_paths": n,
            "mean_residual": float(np.mean(r)),
            "se_residual": se,
            "mean_abs_residual": float(np.mean(np.abs(r))),
            "max_abs_residual": float(np.max(np.abs(r))),
            "skipped_fraction": float(np.sum(self.skipped_steps) / max(1, n * self.n_steps)),
            "within_budget": bool(np.all(self.skipped_steps <= self.budget * self.n_steps)),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", *TERMS, "tau", "skipped_steps"])
            arrs = [self.lhs, self.term_dt, self.term_bv, self.term_jumps, self.term_stoch, self.residual]
            for k in range(len(self)):
                w.writerow([k, *(repr(float(a[k])) for a in arrs), repr(float(self.tau[k])),
                            int(self.skipped_steps[k])])


def assemble_ensemble(f: TestFunction, surface: MonotoneSurface | None, ens: Ensemble, spec: DiffusionSpec,
                      band: float = DEFAULT_BAND, budget: float = DEFAULT_BUDGET, delta: float | None = None,
                      chunk: int = 2000) -> EnsembleLedger:
    """Vectorised :func:`assemble_ledger` over an ensemble, optionally localised."""
    g = ens.grid
    P, N = len(ens), g.size - 1
    out = {k: np.empty(P) for k in ("lhs", "dt", "bv", "jumps", "stoch", "tau")}
    skipped = np.empty(P, dtype=np.int64)
    tl, tr, dts = g[:-1], g[1:], np.diff(g)
    for s in range(0, P, chunk):
        sl = slice(s, min(P, s + chunk))
        x = ens.x[sl]
        parts = _step_terms(f, spec, surface, band, tl, dts, x, ens.x_left[sl], ens.db[sl],
                            ens.da_c[sl], ens.da_jump[sl], tr)
        u = f(g, x)
        if delta is None:
            kexit = np.full(x.shape[0], N)
        else:
            kexit = LocalizationBox(delta).exit_index(g, x)
        keep = np.arange(N)[None, :] < kexit[:, None]
        rows = np.arange(x.shape[0])
        out["lhs"][sl] = u[rows, kexit] - u[:, 0]
        for name, arr in zip(("dt", "bv", "jumps", "stoch"), parts[:4]):
            out[name][sl] = np.sum(np.where(keep, arr, 0.0), axis=-1)
        skipped[sl] = np.sum(parts[4] & keep, axis=-1)
        out["tau"][sl] = g[kexit]
    return EnsembleLedger(out["lhs"], out["dt"], out["bv"], out["jumps"], out["stoch"], skipped,
                          out["tau"], N, budget)


@dataclass(frozen=True)
class JumpCheck:
    form_c: float
    form_full: float
    discrepancy: float
    relative: float
    line_discrepancy: float

    def passed(self, tol: float = 1e-12) -> bool:
        return self.relative <= tol


def jump_equivalence_check(f: TestFunction, path: PathRecord, spec: DiffusionSpec,
                           line_nodes: int = LINE_NODES) -> JumpCheck:
    """Compare the two ways of booking jumps and test the line-integral form.

    ``form_c = int gamma U_x dA^c + sum dU``; ``form_full`` integrates against
    the whole ``dA`` and corrects each jump by ``dU - gamma U_x dA``. Each value
    jump is also recomputed as ``int_0^1 <grad U(X- + s gamma dA), gamma dA> ds``.
    """
    g = path.grid
    tl = g[:-1]
    xk = path.x[:-1]
    gam = spec.loading(tl, xk)
    gx = f.dx(tl, xk)
    cont = gam * gx * path.da_c
    parts_c = [cont.ravel()]
    parts_full = [cont.ravel()]
    line_err = 0.0
    js = path.jump_steps
    if js.size:
        tj = g[js + 1]
        xm, xp = path.x_left[js + 1], path.x[js + 1]
        dA = path.da_jump[js]
        jv = f(tj, xp) - f(tj, xm)
        gj = spec.loading(tj, xm)
        lin = np.sum(gj * f.dx(tj, xm) * dA, axis=-1)
        parts_c.append(jv)
        parts_full += [lin, jv, -lin]
        s, w = np.polynomial.legendre.leggauss(int(line_nodes))
        s, w = 0.5 * (s + 1.0), 0.5 * w
        step = xp - xm  # equals gamma(t, X-) dA by construction
        pts = xm[:, None, :] + s[None, :, None] * step[:, None, :]
        grads = f.dx(tj[:, None], pts)
        line = np.einsum("kqi,ki,q->k", grads, step, w)
        line_err = float(np.max(np.abs(line - jv)))
    a = float(np.sum(np.concatenate(parts_c)))
    b = float(np.sum(np.concatenate(parts_full)))
    scale = max(1.0, float(np.sum(np.abs(np.concatenate(parts_full)))))
    d = abs(a - b)
    return JumpCheck(a, b, d, d / scale, line_err)


@dataclass
class ResidualStudy:
    dts: list
    rows: list = field(default_factory=list)

    @property
    def mean_abs(self) -> list:
        return [r["mean_abs_residual"] for r in self.rows]

    @property
    def orders(self) -> list:
        out = []
        for a, b, ra, rb in zip(self.dts, self.dts[1:], self.mean_abs, self.mean_abs[1:]):
            if ra > 0 and rb > 0:
                out.append(float(np.log(ra / rb) / np.log(a / b)))
            else:
                out.append(float("nan"))
        return out

    @property
    def strictly_decreasing(self) -> bool:
        m = self.mean_abs
        return all(b < a for a, b in zip(m, m[1:]))

    @property
    def final_within_3se(self) -> bool:
        r = self.rows[-1]
        return abs(r["mean_residual"]) <= 3.0 * r["se_residual"] or r["mean_abs_residual"] == 0.0

    def to_dict(self):
        return {"dts": list(self.dts), "levels": self.rows, "orders": self.orders,
                "strictly_decreasing": self.strictly_decreasing, "final_within_3se": self.final_within_3se}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def residual_study(f: TestFunction, surface: MonotoneSurface | None, spec: DiffusionSpec, driver: BVDriverSpec,
                   x0, dts, n_paths: int, seed: int, T: float = 1.0, band: float = DEFAULT_BAND,
                   keep_last: bool = False):
    """Ledger residual statistics for each step size (independent noise per level).

    Returns the study, plus the finest level's :class:`EnsembleLedger` when
    ``keep_last`` is set.
    """
    dts = [float(d) for d in dts]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError("step sizes must be strictly decreasing")
    study = ResidualStudy(dts)
    led = None
    for lvl, dt in enumerate(dts):
        n_steps = int(round(T / dt))
        ens = simulate_ensemble(spec, driver, x0, uniform_grid(T, n_steps), derive_seed(seed, lvl), n_paths)
        led = assemble_ensemble(f, surface, ens, spec, band=band)
        del ens
        study.rows.append({"dt": dt, "n_steps": n_steps, **led.stats()})
    return (study, led) if keep_last else study
