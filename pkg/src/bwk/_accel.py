"""Numba switch.

Kernels are written once in the numba-compatible subset of numpy. Setting
``BWK_DISABLE_NUMBA=1`` (or running without numba installed) leaves them as
plain Python/numpy functions; otherwise they are compiled with ``njit``.
"""

import os

_DISABLED = os.environ.get("BWK_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - depends on environment
    _njit = None
    NUMBA_ENABLED = False


def jit(fn):
    if NUMBA_ENABLED:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def python_version(fn):
    """Return the uncompiled function behind a possibly-jitted kernel."""
    return getattr(fn, "py_func", fn)
