"""Backend selection for the numeric kernels.

Kernels are compiled with numba when it is importable and not disabled via
the ``PDDTRACK_NUMBA`` environment variable (``0``/``false``/``off`` selects
the pure-numpy path). The flag is read once, at import time.
"""

import os

_FLAG = os.environ.get("PDDTRACK_NUMBA", "1").strip().lower()
_REQUESTED = _FLAG not in ("0", "false", "off", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _REQUESTED


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def _identity(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return _identity


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
