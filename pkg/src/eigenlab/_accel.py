"""Numba switch.

Set ``EIGENLAB_DISABLE_NUMBA=1`` to route every kernel through the pure-numpy
implementations in :mod:`eigenlab.kernels`. The flag is read once, at import.
"""
import os

_DISABLED = os.environ.get("EIGENLAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func
        return decorator

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
