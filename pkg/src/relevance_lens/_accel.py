"""Numba switch.

Set ``RELEVANCE_LENS_NUMBA=0`` before import to run every kernel through its
pure-numpy twin. When numba is missing the numpy path is used automatically.
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def _flag_enabled(value):
    return value.strip().lower() not in ("0", "false", "no", "off", "")


NUMBA_ENABLED = _HAVE_NUMBA and _flag_enabled(os.environ.get("RELEVANCE_LENS_NUMBA", "1"))


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` when numba is usable, identity otherwise."""
    if not _HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
