"""Switch between numba-compiled kernels and their pure numpy/Python fallbacks.

Set ``AISC_DISABLE_JIT=1`` before import to force the fallback path everywhere.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

HAVE_NUMBA = numba is not None
USE_JIT = HAVE_NUMBA and os.environ.get("AISC_DISABLE_JIT", "").lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compilation is always available when numba is installed, independent of
    ``USE_JIT``; callers pick the implementation via ``USE_JIT``.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda func: func
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
