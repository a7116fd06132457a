"""Numba switch.

Set ``MRFZOOM_DISABLE_NUMBA=1`` to run every hot kernel through its
pure-numpy implementation instead of the compiled loop version.
"""
import os

_flag = os.environ.get("MRFZOOM_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    The loop kernels are always defined so the benchmark and parity tests
    can reach them; only the dispatch in :mod:`mrfzoom.kernels` consults
    :data:`USE_NUMBA`.
    """
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
