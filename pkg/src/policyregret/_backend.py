"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the pure-Python
twin is used. Set ``POLICYREGRET_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

_requested = os.environ.get("POLICYREGRET_BACKEND", "auto").lower()

kernels = _kernels_py
if _requested != "python":
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _requested == "cython":
            raise

BACKEND = kernels.BACKEND


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
