"""Built-in diffusion coefficient families.

All callables follow the vectorised convention of :mod:`monoito.sde`.
"""

from __future__ import annotations

import numpy as np

from .sde import DiffusionSpec


def _diag(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def frozen(dim: int = 1) -> DiffusionSpec:
    """All coefficients zero: X stays at its initial value."""
    zero = lambda t, x: np.zeros(np.shape(x))
    zero_m = lambda t, x: np.zeros(np.shape(x) + (dim,))
    return DiffusionSpec(dim, zero, zero_m, None, "frozen", {"dim": dim})


def brownian(dim: int = 1, scale: float = 1.0, drift: float = 0.0) -> DiffusionSpec:
    """``dX = drift dt + scale dB`` in every coordinate."""
    a = lambda t, x: np.full(np.shape(x), float(drift))
    s = lambda t, x: np.broadcast_to(float(scale) * np.eye(dim), np.shape(x) + (dim,))
    return DiffusionSpec(dim, a, s, lambda t, x: np.ones(np.shape(x)), "brownian",
                         {"dim": dim, "scale": scale, "drift": drift},
                         {"alpha": "lipschitz", "sigma": "lipschitz"})


def gbm(mu: float, nu: float) -> DiffusionSpec:
    """Geometric Brownian motion ``dX = mu X dt + nu X dB``."""
    return DiffusionSpec(
        1,
        lambda t, x: mu * x,
        lambda t, x: (nu * x)[..., None],
        lambda t, x: np.ones(np.shape(x)),
        "gbm", {"mu": mu, "nu": nu},
        {"alpha": "lipschitz", "sigma": "lipschitz"},
    )


def cir(kappa: float, theta: float, nu: float) -> DiffusionSpec:
    """Square-root diffusion with full truncation, ``sigma = nu sqrt(x+)``."""
    return DiffusionSpec(
        1,
        lambda t, x: kappa * (theta - x),
        lambda t, x: (nu * np.sqrt(np.maximum(x, 0.0)))[..., None],
        lambda t, x: np.ones(np.shape(x)),
        "cir", {"kappa": kappa, "theta": theta, "nu": nu},
        {"alpha": "lipschitz", "sigma": "holder-1/2"},
    )


def sqrt_diffusion(nu: float = 1.0) -> DiffusionSpec:
    """Driftless ``dX = nu sqrt(X+) dB``; ``beta(x) = nu^2 x+``."""
    return DiffusionSpec(
        1,
        lambda t, x: np.zeros(np.shape(x)),
        lambda t, x: (nu * np.sqrt(np.maximum(x, 0.0)))[..., None],
        lambda t, x: np.ones(np.shape(x)),
        "sqrt-diffusion", {"nu": nu},
    )


def constant_drift(a) -> DiffusionSpec:
    """Deterministic motion ``dX = a dt``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    m = a.size
    return DiffusionSpec(
        m,
        lambda t, x: np.broadcast_to(a, np.shape(x)),
        lambda t, x: np.zeros(np.shape(x) + (m,)),
        lambda t, x: np.ones(np.shape(x)),
        "constant-drift", {"a": a.tolist()},
    )


def stochastic_drift_gbm(nu: float, kappa: float, mean: float, eta: float, rho: float = 0.0) -> DiffusionSpec:
    """Asset ``x1`` with drift ``x2 * x1`` and a mean-reverting factor ``x2``.

    ``dX1 = X2 X1 dt + nu X1 dW1``, ``dX2 = kappa (mean - X2) dt + eta dW2``,
    with correlation ``rho`` between ``W1`` and ``W2``.
    """
    c = np.sqrt(1.0 - rho * rho)

    def alpha(t, x):
        out = np.empty(np.shape(x))
        out[..., 0] = x[..., 1] * x[..., 0]
        out[..., 1] = kappa * (mean - x[..., 1])
        return out

    def sigma(t, x):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 0] = nu * x[..., 0]
        out[..., 1, 0] = eta * rho
        out[..., 1, 1] = eta * c
        return out

    return DiffusionSpec(2, alpha, sigma, lambda t, x: np.ones(np.shape(x)), "stochastic-drift-gbm",
                         {"nu": nu, "kappa": kappa, "mean": mean, "eta": eta, "rho": rho})


def tangent_degenerate(eps: float = 0.0) -> DiffusionSpec:
    """Two-dimensional noise ``sigma = [[1, s], [1, 0]]`` with ``s = sqrt((x1 - x2)+ + eps)``.

    ``beta = [[1 + s^2, 1], [1, 1]]``: full-rank noise along the diagonal
    ``(1, 1)`` plus a transversal part that vanishes on ``x1 = x2``.
    """

    def sigma(t, x):
        d = np.maximum(x[..., 0] - x[..., 1], 0.0) + eps
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 0] = 1.0
        out[..., 1, 0] = 1.0
        out[..., 0, 1] = np.sqrt(d)
        return out

    return DiffusionSpec(2, lambda t, x: np.zeros(np.shape(x)), sigma,
                         lambda t, x: np.ones(np.shape(x)), "tangent-degenerate", {"eps": eps})


def stochastic_rate_gbm(nu: float, kappa: float, theta: float, eta: float) -> DiffusionSpec:
    """Asset growing at a square-root short rate ``x2``.

    ``dX1 = X2 X1 dt + nu X1 dW1``, ``dX2 = kappa (theta - X2) dt + eta sqrt(X2+) dW2``.
    """

    def alpha(t, x):
        out = np.empty(np.shape(x))
        out[..., 0] = x[..., 1] * x[..., 0]
        out[..., 1] = kappa * (theta - x[..., 1])
        return out

    def sigma(t, x):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 0] = nu * x[..., 0]
        out[..., 1, 1] = eta * np.sqrt(np.maximum(x[..., 1], 0.0))
        return out

    return DiffusionSpec(2, alpha, sigma, lambda t, x: np.ones(np.shape(x)), "stochastic-rate-gbm",
                         {"nu": nu, "kappa": kappa, "theta": theta, "eta": eta})


def shared_noise_ou(kappa: float, mean: float, eta: float, dim: int = 2) -> DiffusionSpec:
    """``dim`` copies of one OU factor driven by the same Brownian motion."""

    def sigma(t, x):
        out = np.zeros(np.shape(x) + (dim,))
        out[..., :, 0] = eta
        return out

    return DiffusionSpec(dim, lambda t, x: kappa * (mean - x), sigma, None, "shared-noise-ou",
                         {"kappa": kappa, "mean": mean, "eta": eta, "dim": dim})
