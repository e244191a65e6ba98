"""Pathwise comparison of two scalar SDEs sharing noise and a BV path.

    dY^i = eta_i(t, Y^i, aux_t) dt + theta(t, Y^i, aux_t) dB + dC,    i = 1, 2

Randomness of the coefficients enters through ``aux``, an auxiliary path
simulated with its own noise stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sde import (BVDriverSpec, DiffusionSpec, SimulationBlowUp, _jump_increments, brownian_increments,
                  derive_seed, integrate, merge_jump_times)


class InstanceViolation(ValueError):
    """The instance breaks ``eta1 <= eta2`` or ``y0_1 <= y0_2``."""


@dataclass(frozen=True)
class Modulus:
    """Modulus of continuity ``h`` for ``theta``: ``linear`` (c u), ``sqrt`` (c sqrt u),
    ``holder`` (c u^p) or ``custom`` (``func``)."""

    kind: str = "linear"
    scale: float = 1.0
    p: float = 1.0
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "sqrt", "holder", "custom"):
            raise ValueError(f"unknown modulus kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom modulus needs func")

    @property
    def exponent(self) -> float | None:
        return {"linear": 1.0, "sqrt": 0.5, "holder": float(self.p)}.get(self.kind)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "custom":
            return np.asarray(self.func(u), dtype=float)
        return self.scale * u ** self.exponent

    def integral_diverges(self) -> bool | None:
        """Whether ``int_0^eps h(u)^-2 du`` is infinite; None when it cannot be decided."""
        p = self.exponent
        return None if p is None else bool(2.0 * p >= 1.0)

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "p": self.p}


@dataclass(frozen=True)
class AuxPath:
    spec: DiffusionSpec
    x0: tuple
    driver: BVDriverSpec = field(default_factory=BVDriverSpec.zero)


@dataclass(frozen=True)
class ComparisonInstance:
    """Two ordered drifts with shared diffusion and shared BV path ``C``.

    ``eta1``, ``eta2`` and ``theta`` take ``(t, y, aux)`` where ``aux`` is the
    auxiliary state at ``t`` (shape ``(P, k)``) or None. ``lipschitz_index``
    names the drift (1 or 2) declared Lipschitz with constant ``lipschitz_K``.
    """

    eta1: Callable
    eta2: Callable
    theta: Callable
    y0_1: float
    y0_2: float
    C: BVDriverSpec = field(default_factory=BVDriverSpec.zero)
    aux: AuxPath | None = None
    lipschitz_K: float | None = None
    lipschitz_index: int | None = None
    h_modulus: Modulus | None = None
    full_truncation: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.y0_1 > self.y0_2:
            raise InstanceViolation(f"y0_1 <= y0_2 violated: {self.y0_1} > {self.y0_2}")
        if self.lipschitz_index not in (None, 1, 2):
            raise ValueError("lipschitz_index must be 1, 2 or None")

    def th(self, t, y, aux):
        if self.full_truncation:
            y = np.maximum(y, 0.0)
        return np.broadcast_to(np.asarray(self.theta(t, y, aux), dtype=float), np.shape(y))


def _aux_seed(master_seed, k):
    return derive_seed(derive_seed(master_seed, k), 1)


def _refine(grid, levels):
    g = np.asarray(grid, dtype=float)
    for _ in range(levels):
        mid = 0.5 * (g[:-1] + g[1:])
        g = np.insert(g, np.arange(1, g.size), mid)
    return g


def _c_increments(C: BVDriverSpec, grid):
    dts = np.diff(grid)
    dc = np.array([C.continuous_rate(grid[k], 1)[0] * dts[k] for k in range(dts.size)])
    if C.mode == "schedule":
        dc = dc + _jump_increments(grid, C, 1)[:, 0]
    return dc


def _euler(drift, inst, y0, grid, db, dc, aux):
    """One member of the pair; also returns a digest of the noise it consumed."""
    P, N = db.shape
    y = np.empty((P, N + 1))
    y[:, 0] = y0
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(db).tobytes())
    h.update(np.ascontiguousarray(dc).tobytes())
    dts = np.diff(grid)
    th_max = 0.0
    for k in range(N):
        a = None if aux is None else aux[:, k]
        yk = y[:, k]
        th = inst.th(grid[k], yk, a)
        th_max = max(th_max, float(np.max(np.abs(th))))
        y[:, k + 1] = yk + drift(grid[k], yk, a) * dts[k] + th * db[:, k] + dc[k]
        if not np.all(np.isfinite(y[:, k + 1])):
            raise SimulationBlowUp(grid[k + 1], int(np.flatnonzero(~np.isfinite(y[:, k + 1]))[0]))
    return y, h.hexdigest(), th_max


def _check_order(inst, grid, y1, y2, aux, tol=1e-12):
    for k in range(grid.size - 1):
        a = None if aux is None else aux[:, k]
        for y in (y1[:, k], y2[:, k]):
            e1 = np.broadcast_to(inst.eta1(grid[k], y, a), y.shape)
            e2 = np.broadcast_to(inst.eta2(grid[k], y, a), y.shape)
            bad = e1 > e2 + tol * (1.0 + np.abs(e2))
            if np.any(bad):
                p = int(np.flatnonzero(bad)[0])
                raise InstanceViolation(
                    f"eta1 <= eta2 violated at t={grid[k]:.6g}, y={y[p]:.6g}: "
                    f"eta1={e1[p]:.6g} > eta2={e2[p]:.6g} (path {p})")


def simulate_pair(inst: ComparisonInstance, grid, db, aux=None, recenter: bool = False):
    """Coupled Euler paths ``(Y1, Y2, digest1, digest2, max theta)`` on shared ``db``.

    With ``recenter`` the BV path is removed (``Ybar = Y - C``) and compensated in
    the coefficients, which are evaluated at ``Ybar + C_t``.
    """
    grid = np.asarray(grid, dtype=float)
    dc = _c_increments(inst.C, grid)
    if recenter:
        c_path = np.concatenate([[0.0], np.cumsum(dc)])
        shift = lambda f: (lambda t, y, a: f(t, y + c_path[np.searchsorted(grid, t)], a))
        base = ComparisonInstance(shift(inst.eta1), shift(inst.eta2), shift(inst.th), inst.y0_1, inst.y0_2,
                                  name=inst.name)
        zero = np.zeros_like(dc)
        y1, d1, m1 = _euler(base.eta1, base, inst.y0_1, grid, db, zero, aux)
        y2, d2, m2 = _euler(base.eta2, base, inst.y0_2, grid, db, zero, aux)
        return y1, y2, d1, d2, max(m1, m2)
    y1, d1, m1 = _euler(inst.eta1, inst, inst.y0_1, grid, db, dc, aux)
    y2, d2, m2 = _euler(inst.eta2, inst, inst.y0_2, grid, db, dc, aux)
    _check_order(inst, grid, y1, y2, aux)
    return y1, y2, d1, d2, max(m1, m2)


def _noise(inst, grid, n_paths, master_seed):
    db = np.stack([brownian_increments(derive_seed(master_seed, k), grid, 1)[:, 0] for k in range(n_paths)])
    aux = None
    if inst.aux is not None:
        sp = inst.aux
        dba = np.stack([brownian_increments(_aux_seed(master_seed, k), grid, sp.spec.dim)
                        for k in range(n_paths)])
        aux, _, _, _ = integrate(sp.spec, sp.driver, np.asarray(sp.x0, dtype=float), grid, dba)
    return db, aux


@dataclass
class OrderingReport:
    fraction: float
    worst_violation: float
    tol_ord: float
    coupling_exact: bool
    refinement: list
    n_paths: int
    n_steps: int

    @property
    def passed(self) -> bool:
        return self.fraction == 1.0

    @property
    def violation_shrinks(self) -> bool:
        w = [r["worst_violation"] for r in self.refinement]
        return all(b <= a for a, b in zip(w, w[1:])) and (w[-1] < w[0] or w[0] == 0.0)

    def to_dict(self):
        return {"ordering_fraction": self.fraction, "worst_violation": self.worst_violation,
                "tol_ord": self.tol_ord, "coupling_exact": self.coupling_exact,
                "refinement": self.refinement, "violation_shrinks": self.violation_shrinks,
                "passed": self.passed, "n_paths": self.n_paths, "n_steps": self.n_steps}


def compare_paths(inst: ComparisonInstance, grid, n_paths: int, master_seed: int, tol_ord: float | None = None,
                  refine_levels: int = 1) -> OrderingReport:
    """Coupled simulation of the pair and the ordering statistics.

    Noise is drawn on the grid refined ``refine_levels`` times and aggregated
    for the coarser levels, so every row of the refinement table sees the
    same Brownian paths. The headline numbers are those of the input grid.
    """
    grid = merge_jump_times(grid, inst.C)
    fine = _refine(grid, refine_levels)
    db_f, aux_f = _noise(inst, fine, int(n_paths), master_seed)
    rows = []
    head = None
    for lvl in range(refine_levels + 1):
        step = 2 ** (refine_levels - lvl)
        g = fine[::step]
        db = db_f.reshape(db_f.shape[0], -1, step).sum(axis=-1)
        aux = None if aux_f is None else aux_f[:, ::step]
        y1, y2, d1, d2, th_max = simulate_pair(inst, g, db, aux)
        dt = float(np.max(np.diff(g)))
        tol = tol_ord if tol_ord is not None else 10.0 * np.sqrt(dt) * th_max
        gap = y1 - y2
        frac = float(np.mean(gap <= tol))
        worst = float(max(np.max(gap), 0.0))
        rows.append({"dt": dt, "worst_violation": worst, "fraction_ordered": frac,
                     "strict_fraction": float(np.mean(gap <= 0.0)), "tol_ord": float(tol)})
        if lvl == 0:
            head = (frac, worst, float(tol), d1 == d2)
    frac, worst, tol, exact = head
    return OrderingReport(frac, worst, tol, exact, rows, int(n_paths), int(grid.size - 1))


@dataclass
class ConditionReport:
    lipschitz_index: int | None
    lipschitz_worst_ratio: float | None
    lipschitz_ok: bool | None
    modulus_ok: bool | None
    modulus_worst_excess: float | None
    divergence: bool | None
    messages: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.lipschitz_ok) and bool(self.modulus_ok) and self.divergence is True

    def to_dict(self):
        return {"lipschitz_index": self.lipschitz_index, "lipschitz_worst_ratio": self.lipschitz_worst_ratio,
                "lipschitz_ok": self.lipschitz_ok, "modulus_ok": self.modulus_ok,
                "modulus_worst_excess": self.modulus_worst_excess,
                "divergence": "unverifiable" if self.divergence is None else self.divergence,
                "passed": self.passed, "messages": self.messages}


def check_coefficient_conditions(inst: ComparisonInstance, sample_box, n_samples: int = 2000,
                                 seed: int = 0) -> ConditionReport:
    """Sample the Lipschitz bound of the declared drift and the modulus bound of ``theta``.

    ``sample_box`` lists ``(lo, hi)`` for ``t``, ``y`` and then each auxiliary
    coordinate.
    """
    rng = np.random.default_rng(seed)
    box = np.asarray(sample_box, dtype=float)
    n = int(n_samples)
    t = rng.uniform(box[0, 0], box[0, 1], n)
    y = rng.uniform(box[1, 0], box[1, 1], n)
    y2 = rng.uniform(box[1, 0], box[1, 1], n)
    aux = rng.uniform(box[2:, 0], box[2:, 1], size=(n, box.shape[0] - 2)) if box.shape[0] > 2 else None
    dy = np.abs(y - y2)
    msgs = []
    lip_ratio = lip_ok = None
    if inst.lipschitz_index is None or inst.lipschitz_K is None:
        msgs.append("no Lipschitz drift declared; the comparison result needs one")
    else:
        eta = inst.eta1 if inst.lipschitz_index == 1 else inst.eta2
        de = np.abs(np.broadcast_to(eta(t, y, aux), y.shape) - np.broadcast_to(eta(t, y2, aux), y.shape))
        ok = dy > 0
        lip_ratio = float(np.max(de[ok] / dy[ok], initial=0.0))
        lip_ok = bool(lip_ratio <= inst.lipschitz_K * (1 + 1e-9) + 1e-12)
    mod_ok = excess = div = None
    if inst.h_modulus is None:
        msgs.append("no modulus declared for theta")
    else:
        dth = np.abs(inst.th(t, y, aux) - inst.th(t, y2, aux))
        bound = inst.h_modulus(dy)
        excess = float(np.max(dth - bound, initial=0.0))
        mod_ok = bool(excess <= 1e-12 + 1e-9 * float(np.max(bound, initial=0.0)))
        div = inst.h_modulus.integral_diverges()
        if div is None:
            msgs.append("divergence of int h^-2 cannot be decided for a custom modulus")
    return ConditionReport(inst.lipschitz_index, lip_ratio, lip_ok, mod_ok, excess, div, msgs)
