"""Numba acceleration switch.

Hot kernels are compiled with numba unless the environment variable
PLANELOC_NUMBA is set to "0" (or numba is not importable), in which case the
pure-numpy fallbacks run instead.  The flag is read once at import time.
"""

from __future__ import annotations

import os

USE_NUMBA = os.environ.get("PLANELOC_NUMBA", "1") != "0"

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit when acceleration is disabled."""
        if args and callable(args[0]) and len(args) == 1 and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def thread_count() -> int:
    """Worker cap from PLANELOC_THREADS; defaults to 1 (sequential)."""
    raw = os.environ.get("PLANELOC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"PLANELOC_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"PLANELOC_THREADS must be at least 1, got {n}")
    return n
