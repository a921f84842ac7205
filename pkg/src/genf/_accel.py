"""Optional numba acceleration.

Set ``GENF_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable. The flag is read once at import time.
"""
import os

_disabled = os.environ.get("GENF_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError("numba disabled by GENF_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # bare @njit and @njit(cache=True) both have to work
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
