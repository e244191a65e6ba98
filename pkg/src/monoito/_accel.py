"""Optional numba acceleration.

Set ``MONOITO_NUMBA=0`` to force the pure-numpy code paths even when numba
is installed. When numba is missing or disabled, ``njit`` is the identity
decorator so kernels stay importable.
"""

from __future__ import annotations

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("MONOITO_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


def njit(*args, **kwargs):
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def default_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    if n is None or not HAVE_NUMBA:
        return
    _numba.set_num_threads(max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS)))
