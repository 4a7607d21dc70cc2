"""Numeric-kernel backend selection.

The compiled extension is preferred when importable; the pure-python module
is always available.  `LGMFIT_SPARSE_BACKEND=python|compiled` forces a
choice at import time, and `get_backend` lets callers (benchmarks, tests)
pick one explicitly at run time.
"""

from __future__ import annotations

import os

from ..errors import LgmError
from . import _py_core

try:
    from . import _core
except ImportError:
    _core = None

HAVE_COMPILED = _core is not None


def get_backend(name: str | None = None):
    """Return the kernel module for `name` (None = default selection)."""
    if name is None:
        name = os.environ.get("LGMFIT_SPARSE_BACKEND")
    if name is None:
        return _core if HAVE_COMPILED else _py_core
    if name == "python":
        return _py_core
    if name == "compiled":
        if not HAVE_COMPILED:
            raise LgmError("compiled sparse core is not available")
        return _core
    raise LgmError(f"unknown sparse backend {name!r}")


DEFAULT = get_backend()
