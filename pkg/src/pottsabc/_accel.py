"""Numba switch.

Set ``POTTSABC_DISABLE_NUMBA=1`` before import to run every kernel through
its pure-numpy path. Both paths consume identical random inputs and produce
identical outputs.
"""
from __future__ import annotations

import os

_disabled = os.environ.get("POTTSABC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _disabled:
        raise ImportError("disabled by POTTSABC_DISABLE_NUMBA")
    from numba import njit

    NUMBA_OK = True
except ImportError:
    NUMBA_OK = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def deco(f):
            return f

        return deco


__all__ = ["njit", "NUMBA_OK"]
