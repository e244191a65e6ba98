"""Time the PSOR kernel under the numba and pure-numpy backends.

Run with ``python3 benchmarks/bench_psor.py [--n 201] [--repeat 3]``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from monoito._accel import HAVE_NUMBA
from monoito.kernels import psor


def put_system(n: int, dt: float = 1e-2, K: float = 100.0, r: float = 0.05, nu: float = 0.2, xmax: float = 400.0):
    """One implicit step of the put problem in the (n, 1) layout used by the solver."""
    x = np.linspace(0.0, xmax, n)
    h = x[1] - x[0]
    a = 0.5 * nu**2 * x**2 / h**2
    b = r * x / (2 * h)
    coef = np.zeros((n, 1, 3, 3))
    coef[:, 0, 0, 1] = -dt * (a - b)
    coef[:, 0, 2, 1] = -dt * (a + b)
    coef[:, 0, 1, 1] = 1.0 + dt * (2 * a + r)
    coef[0, 0, :, 1] = [0.0, 1.0, 0.0]
    coef[-1, 0, :, 1] = [0.0, 1.0, 0.0]
    g = np.maximum(K - x, 0.0)[:, None]
    return coef, g.copy(), g, g.copy()


def time_backend(backend: str, n: int, repeat: int) -> tuple[float, int]:
    coef, rhs, obs, u0 = put_system(n)
    psor(coef, rhs, obs, u0, backend=backend)  # warm-up / JIT
    best, its = np.inf, 0
    for _ in range(repeat):
        t0 = time.perf_counter()
        _, its = psor(coef, rhs, obs, u0, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, its


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=401)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    res = {}
    for b in backends:
        res[b] = time_backend(b, args.n, args.repeat)
        print(f"{b:6s} n={args.n} iterations={res[b][1]:6d} best={res[b][0] * 1e3:9.3f} ms")
    if len(res) == 2:
        print(f"speed-up numba/numpy: {res['numpy'][0] / res['numba'][0]:.1f}x")


if __name__ == "__main__":
    main()
