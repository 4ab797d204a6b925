"""Select between numba-compiled kernels and the pure numpy path.

Set ``SPRDM_DISABLE_NUMBA=1`` before import to force the numpy fallback.
"""
import os

_flag = os.environ.get("SPRDM_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` in nopython mode; identity when numba is unavailable.

    fastmath stays off: reductions must be bit-reproducible run to run.
    """
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True, error_model="numpy")(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
