"""Numba switch.

Set ``QKD810_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""
import os

DISABLE_ENV = "QKD810_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

HAVE_NUMBA = numba is not None


def env_disabled():
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on")


JIT_OPTIONS = {"cache": True, "nogil": True}


def njit(func):
    if numba is None:
        return func
    return numba.njit(**JIT_OPTIONS)(func)
