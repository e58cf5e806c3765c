"""Numba switch for the hot kernels.

Set ``SEGCONSIST_DISABLE_NUMBA=1`` to force the pure-numpy path.  Both paths
are kept numerically interchangeable (tests compare them).
"""
import os

_disabled = os.environ.get("SEGCONSIST_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba as _nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _nb = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return _nb.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
