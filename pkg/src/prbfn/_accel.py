"""Numba detection and the environment switch for the pure-numpy kernels.

Set ``PRBFN_DISABLE_NUMBA=1`` to force the numpy fallback even when numba
is installed. The flag is read once, at import time.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is the optional "fast" extra
    numba = None
    HAVE_NUMBA = False

_flag = os.environ.get("PRBFN_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
