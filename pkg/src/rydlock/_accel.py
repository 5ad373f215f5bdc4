"""Numba dispatch.

Set ``RYDLOCK_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The jitted dispatchers keep the original function on ``.py_func``.
"""

import os

_FLAG = os.environ.get("RYDLOCK_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _FLAG not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def jit(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


def py_func(fn):
    """Underlying Python function of a (possibly) jitted kernel."""
    return getattr(fn, "py_func", fn)
