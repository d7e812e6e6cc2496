"""Numba switch.

Set ``DDAGOSSIP_PURE_NUMPY=1`` before import to run every kernel as plain
Python/numpy. The flag is read once, so comparing both paths needs two
interpreters (see benchmarks/bench_kernels.py).
"""

import os
import warnings

PURE_NUMPY = os.environ.get("DDAGOSSIP_PURE_NUMPY", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    if not PURE_NUMPY:
        warnings.warn("numba could not be imported, falling back to pure numpy kernels")
    PURE_NUMPY = True


def njit(func):
    if PURE_NUMPY:
        return func
    return numba.njit(cache=True)(func)


def python_version(func):
    """The uncompiled function behind a (possibly) jitted kernel."""
    return getattr(func, "py_func", func)
