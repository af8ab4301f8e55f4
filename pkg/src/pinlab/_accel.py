"""Backend selection for the hot loops.

Every compute kernel in :mod:`pinlab._kernels` exists twice: a numba
``@njit`` loop version and a vectorised numpy version. The numba path is
used when numba imports cleanly and ``PINLAB_DISABLE_NUMBA`` is unset (or
``0``). Set ``PINLAB_DISABLE_NUMBA=1`` to force the numpy path.
"""
from __future__ import annotations

import os
import warnings

# old system TBB builds trigger a harmless warning; numba falls back to another layer
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _flag(name: str) -> bool:
    return os.environ.get(name, "0").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _flag("PINLAB_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is present, identity otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int | None) -> int:
    """Set the numba thread count (no-op on the numpy path). Returns the count in effect."""
    if not HAVE_NUMBA:
        return 1
    if n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
    return numba.get_num_threads()


def default_threads() -> int | None:
    raw = os.environ.get("PINLAB_THREADS")
    if raw is None or not raw.strip():
        return None
    return int(raw)
