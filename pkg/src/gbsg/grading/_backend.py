"""Kernel backend selection.

The patch-search inner loops dominate the runtime of the whole pipeline, so
they are compiled with numba when it is importable.  Setting the environment
variable ``GBSG_DISABLE_NUMBA=1`` (before import) forces the pure-NumPy
fallback; the benchmark subcommand exercises both.
"""

from __future__ import annotations

import os

_ENV_FLAG = "GBSG_DISABLE_NUMBA"

NUMBA_DISABLED = os.environ.get(_ENV_FLAG, "").strip().lower() in ("1", "true", "yes")

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not NUMBA_DISABLED


def get_backend(name: str | None = None):
    """Return the kernel module for `name` in {None,'auto','numba','numpy'}."""
    if name in (None, "auto"):
        name = "numba" if USE_NUMBA else "numpy"
    if name == "numba":
        if not HAS_NUMBA:
            raise ImportError("numba backend requested but numba is not installed")
        from . import _numba_backend

        return _numba_backend
    if name == "numpy":
        from . import _numpy_backend

        return _numpy_backend
    raise ValueError(f"unknown backend {name!r}")


def backend_name(name: str | None = None) -> str:
    if name in (None, "auto"):
        return "numba" if USE_NUMBA else "numpy"
    return name


def set_threads(n: int | None) -> int:
    """Set worker count for the numba backend; returns the effective count.

    Requests above numba's configured maximum are clamped.  The numpy
    backend is single-threaded, so the request is reported back as 1.
    """
    if not USE_NUMBA:
        return 1
    import numba

    if n is None:
        return numba.get_num_threads()
    limit = numba.config.NUMBA_NUM_THREADS
    eff = max(1, min(int(n), limit))
    numba.set_num_threads(eff)
    return eff
