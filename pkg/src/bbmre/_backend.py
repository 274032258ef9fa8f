"""Kernel backend selection.

Hot loops are written once as plain Python over numpy arrays and compiled with
``numba.njit`` unless ``BBMRE_BACKEND=numpy`` is set (or numba is missing), in
which case the vectorised numpy fallbacks are used instead.  The flag is read
once at import time.
"""
import os

_requested = os.environ.get("BBMRE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"BBMRE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

USE_NUMBA = _requested == "numba" and _numba is not None
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """Compile with numba when enabled, otherwise return the function unchanged."""
    if USE_NUMBA:
        return _numba.njit(cache=True)(func)
    return func
