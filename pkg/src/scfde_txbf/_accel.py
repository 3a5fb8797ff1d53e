"""Backend selection for the hot kernels.

Numba is used when importable unless ``SCFDE_TXBF_NO_NUMBA`` is set to a
truthy value, in which case every kernel dispatches to its pure-numpy twin.
The flag is read once at import time.
"""

import os

_FLAG = "SCFDE_TXBF_NO_NUMBA"


def _env_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache`` and ``nogil`` on; identity if numba is missing."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if _numba is None:  # pragma: no cover
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
