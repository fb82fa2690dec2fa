"""Backend switch for the compiled kernels.

Set ``DIFPATH_NUMBA=0`` before import to force the pure-numpy paths. When
numba is missing the numpy paths are used regardless.
"""
import os

_flag = os.environ.get("DIFPATH_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    if not _requested:
        raise ImportError("disabled by DIFPATH_NUMBA")
    from numba import njit as _njit

    USE_NUMBA = True
except ImportError:
    _njit = None
    USE_NUMBA = False


def jit(fn):
    """``njit(cache=True)`` when numba is active, identity otherwise."""
    if USE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
