"""Selects between numba-compiled kernels and the pure-numpy fallback.

Set ``AMM_LAB_DISABLE_NUMBA=1`` to force the numpy path (numba missing has the
same effect).
"""
from __future__ import annotations

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover - depends on the environment
    _numba = None

HAS_NUMBA = _numba is not None
DISABLED = os.environ.get("AMM_LAB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}
USE_NUMBA = HAS_NUMBA and not DISABLED


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity otherwise."""
    if args and callable(args[0]) and len(args) == 1 and not kwargs:
        fn = args[0]
        return _numba.njit(cache=True)(fn) if USE_NUMBA else fn

    def wrap(fn):
        if not USE_NUMBA:
            return fn
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)(fn)

    return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
