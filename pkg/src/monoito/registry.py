"""Named built-ins addressable from scenario files."""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functions, models
from .boundary import affine_surface, constant_surface, load_tabulated_csv
from .comparison import AuxPath, ComparisonInstance, Modulus
from .sde import BVDriverSpec
from .stopping import StoppingProblem


@dataclass(frozen=True)
class Builtin:
    category: str
    name: str
    factory: Callable
    role: str

    def params(self) -> dict:
        sig = inspect.signature(self.factory)
        return {k: (None if p.default is inspect.Parameter.empty else p.default) for k, p in sig.parameters.items()}

    def build(self, **params):
        return self.factory(**params)


REGISTRY: dict[tuple[str, str], Builtin] = {}


def register(category: str, name: str, role: str):
    def deco(fn):
        REGISTRY[(category, name)] = Builtin(category, name, fn, role)
        return fn
    return deco


def get(category: str, name: str) -> Builtin:
    try:
        return REGISTRY[(category, name)]
    except KeyError:
        known = ", ".join(sorted(n for c, n in REGISTRY if c == category))
        raise KeyError(f"unknown {category} builtin {name!r} (known: {known})") from None


def categories():
    return sorted({c for c, _ in REGISTRY})


def listing() -> list[dict]:
    return [{"category": b.category, "name": b.name, "role": b.role, "params": b.params()}
            for (_, _), b in sorted(REGISTRY.items())]


# --- dynamics ------------------------------------------------------------------
register("dynamics", "frozen", "all coefficients zero")(models.frozen)
register("dynamics", "brownian", "additive noise with constant drift, unit BV loading")(models.brownian)
register("dynamics", "gbm", "geometric Brownian motion")(models.gbm)
register("dynamics", "cir", "square-root mean-reverting diffusion")(models.cir)
register("dynamics", "sqrt-diffusion", "driftless square-root diffusion, beta = nu^2 x+")(models.sqrt_diffusion)
register("dynamics", "constant-drift", "deterministic motion")(models.constant_drift)
register("dynamics", "stochastic-drift-gbm", "asset with an OU drift factor")(models.stochastic_drift_gbm)
register("dynamics", "stochastic-rate-gbm", "asset growing at a square-root short rate")(models.stochastic_rate_gbm)
register("dynamics", "tangent-degenerate", "noise degenerating transversally to x1 = x2")(models.tangent_degenerate)

# --- test functions --------------------------------------------------------------
register("test-function", "x32-boundary",
         "C^1 exemplar (x+)^{3/2}: second derivative explodes at the boundary x = 0")(functions.x32_boundary)
register("test-function", "x32-diagonal", "two-dimensional exemplar ((x1 - x2)+)^{3/2}")(functions.x32_diagonal)
register("test-function", "square", "x^2, classical Ito case")(functions.square)
register("test-function", "linear", "a . x + c t, exact telescoping case")(functions.linear)
register("test-function", "constant", "constant function")(functions.constant)
register("test-function", "cubic", "cubic polynomial in two variables")(functions.cubic)
register("test-function", "cross", "product x_i x_j")(functions.cross)
register("test-function", "smooth-sin", "smooth trigonometric function of (t, x1, x2)")(functions.smooth_sin)
register("test-function", "quadratic-time", "a x^2 + c t x")(functions.quadratic_time)


# --- surfaces --------------------------------------------------------------------
@register("surface", "constant", "boundary at a constant level")
def _constant_surface(c: float = 0.0, dim: int = 1, split: int = 0, orientation: str = "above"):
    return constant_surface(c, dim, split, orientation)


@register("surface", "affine", "affine boundary c0 + coefs . (t, z)")
def _affine_surface(c0: float = 0.0, coefs=(0.0,), split: int = 0, orientation: str = "above"):
    return affine_surface(c0, coefs, split, orientation)


@register("surface", "tabulated", "multilinear interpolation of a CSV table")
def _tabulated_surface(path: str = None, directions=None, split: int = 0, orientation: str = "above"):
    if path is None or directions is None:
        raise ValueError("tabulated surface needs 'path' and 'directions'")
    return load_tabulated_csv(path, directions, split, orientation)


# --- moduli ----------------------------------------------------------------------
@register("modulus", "linear", "h(u) = c u, integral of h^-2 diverges")
def _linear_modulus(scale: float = 1.0):
    return Modulus("linear", scale)


@register("modulus", "sqrt", "h(u) = c sqrt(u), integral of h^-2 diverges")
def _sqrt_modulus(scale: float = 1.0):
    return Modulus("sqrt", scale, 0.5)


@register("modulus", "holder", "h(u) = c u^p, integral of h^-2 diverges iff p >= 1/2")
def _holder_modulus(scale: float = 1.0, p: float = 0.5):
    return Modulus("holder", scale, p)


# --- stopping problems -----------------------------------------------------------
def _put_parts(K):
    return dict(
        gain=lambda t, x: np.maximum(K - x[..., 0], 0.0) + 0.0 * np.asarray(t),
        gain_t=lambda t, x: np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])),
        gain_x=lambda t, x: np.where(np.arange(np.shape(x)[-1]) == 0, -1.0, 0.0) * np.ones(np.shape(x)),
        gain_xx=lambda t, x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
    )


@register("problem", "american-put", "finite-horizon American put on geometric Brownian motion")
def american_put(K: float = 100.0, r: float = 0.05, nu: float = 0.2, T: float = 1.0):
    return StoppingProblem(dynamics=models.gbm(r, nu), horizon=T, rate=r, name="american-put", **_put_parts(K))


@register("problem", "perpetual-put-proxy", "long-horizon put approximating the perpetual boundary")
def perpetual_put_proxy(K: float = 100.0, r: float = 0.05, nu: float = 0.2, T: float = 20.0):
    return StoppingProblem(dynamics=models.gbm(r, nu), horizon=T, rate=r, name="perpetual-put-proxy",
                           **_put_parts(K))


@register("problem", "stochastic-drift-put", "put on an asset whose drift is an OU factor (m = 2)")
def stochastic_drift_put(K: float = 100.0, r: float = 0.05, nu: float = 0.2, kappa: float = 2.0,
                         mean: float = 0.05, eta: float = 0.2, rho: float = 0.0, T: float = 1.0):
    return StoppingProblem(dynamics=models.stochastic_drift_gbm(nu, kappa, mean, eta, rho), horizon=T, rate=r,
                           name="stochastic-drift-put", **_put_parts(K))


@register("problem", "american-put-stochastic-rate", "put discounted at a square-root short rate (m = 2)")
def stochastic_rate_put(K: float = 100.0, nu: float = 0.2, kappa: float = 2.0, theta: float = 0.05,
                        eta: float = 0.1, T: float = 1.0):
    return StoppingProblem(dynamics=models.stochastic_rate_gbm(nu, kappa, theta, eta), horizon=T,
                           rate=lambda t, x: np.maximum(x[..., 1], 0.0) + 0.0 * np.asarray(t),
                           name="american-put-stochastic-rate", **_put_parts(K))


@register("problem", "quadratic-bm", "gain a x^2 + c t x on Brownian motion (C^{1,2} gain)")
def quadratic_bm(a: float = 1.0, c: float = 0.5, r: float = 0.0, T: float = 1.0, scale: float = 1.0,
                 drift: float = 0.0, jumps=()):
    f = functions.quadratic_time(a, c)
    driver = BVDriverSpec.schedule(jumps) if jumps else BVDriverSpec.zero()
    return StoppingProblem(gain=f.value, horizon=T, dynamics=models.brownian(1, scale, drift), rate=r,
                           driver=driver, gain_t=f.grad_t, gain_x=f.grad_x, gain_xx=f.hess, gain_c12=True,
                           name="quadratic-bm")


# --- comparison instances ----------------------------------------------------------
@register("comparison", "cir-ordered-drifts", "square-root diffusions with ordered mean-reversion levels")
def cir_ordered_drifts(kappa: float = 1.0, theta1: float = 0.5, theta2: float = 0.6, nu: float = 0.5,
                       y0_1: float = 0.25, y0_2: float = 0.25):
    return ComparisonInstance(
        lambda t, y, a: kappa * (theta1 - y),
        lambda t, y, a: kappa * (theta2 - y),
        lambda t, y, a: nu * np.sqrt(np.maximum(y, 0.0)),
        y0_1, y0_2, lipschitz_K=abs(kappa), lipschitz_index=1, h_modulus=Modulus("sqrt", nu, 0.5),
        full_truncation=True, name="cir-ordered-drifts")


@register("comparison", "constant-drifts", "constant drifts a1 <= a2 with additive noise")
def constant_drifts(a1: float = 0.0, a2: float = 1.0, theta: float = 1.0, y0_1: float = 0.0, y0_2: float = 0.0,
                    jumps=()):
    C = BVDriverSpec.schedule(jumps) if jumps else BVDriverSpec.zero()
    return ComparisonInstance(
        lambda t, y, a: np.full(np.shape(y), float(a1)),
        lambda t, y, a: np.full(np.shape(y), float(a2)),
        lambda t, y, a: np.full(np.shape(y), float(theta)),
        y0_1, y0_2, C=C, lipschitz_K=0.0, lipschitz_index=1, h_modulus=Modulus("linear", 1.0),
        name="constant-drifts")


@register("comparison", "random-drift-gbm",
          "asset drifts driven by two ordered OU factors sharing noise (random coefficients)")
def random_drift_gbm(nu: float = 0.2, kappa: float = 2.0, mean: float = 0.05, eta: float = 0.2,
                     z0_1: float = 0.0, z0_2: float = 0.1, y0: float = 1.0, K: float = 1.0):
    return ComparisonInstance(
        lambda t, y, a: a[..., 0] * y,
        lambda t, y, a: a[..., 1] * y,
        lambda t, y, a: nu * y,
        y0, y0, aux=AuxPath(models.shared_noise_ou(kappa, mean, eta, 2), (z0_1, z0_2)),
        lipschitz_K=K, lipschitz_index=1, h_modulus=Modulus("linear", nu), name="random-drift-gbm")


@register("comparison", "holder-diffusion", "diffusion |y|^p with matching Holder modulus")
def holder_diffusion(p: float = 0.3, a1: float = 0.0, a2: float = 0.5, y0_1: float = 0.5, y0_2: float = 0.5):
    return ComparisonInstance(
        lambda t, y, a: np.full(np.shape(y), float(a1)),
        lambda t, y, a: np.full(np.shape(y), float(a2)),
        lambda t, y, a: np.abs(y) ** p,
        y0_1, y0_2, lipschitz_K=0.0, lipschitz_index=1, h_modulus=Modulus("holder", 1.0, p),
        name="holder-diffusion")


@register("comparison", "linear-diffusion", "diffusion theta(y) = y with linear modulus")
def linear_diffusion(a1: float = 0.0, a2: float = 0.1, y0_1: float = 1.0, y0_2: float = 1.0):
    return ComparisonInstance(
        lambda t, y, a: np.full(np.shape(y), float(a1)),
        lambda t, y, a: np.full(np.shape(y), float(a2)),
        lambda t, y, a: y,
        y0_1, y0_2, lipschitz_K=0.0, lipschitz_index=1, h_modulus=Modulus("linear", 1.0),
        name="linear-diffusion")


@register("comparison", "sqrt-abs-diffusion", "diffusion sqrt|y| with square-root modulus")
def sqrt_abs_diffusion(a1: float = 0.0, a2: float = 0.1, y0_1: float = 0.5, y0_2: float = 0.5):
    return ComparisonInstance(
        lambda t, y, a: np.full(np.shape(y), float(a1)),
        lambda t, y, a: np.full(np.shape(y), float(a2)),
        lambda t, y, a: np.sqrt(np.abs(y)),
        y0_1, y0_2, lipschitz_K=0.0, lipschitz_index=1, h_modulus=Modulus("sqrt", 1.0, 0.5),
        name="sqrt-abs-diffusion")
