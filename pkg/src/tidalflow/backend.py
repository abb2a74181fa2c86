"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
pure-numpy twin takes over.  ``TIDALFLOW_BACKEND`` forces the choice:
``compiled`` (error if unavailable), ``python``, or ``auto`` (default).
"""

from __future__ import annotations

import os

from tidalflow import _kernels_py

_requested = os.environ.get("TIDALFLOW_BACKEND", "auto").lower()

if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(f"TIDALFLOW_BACKEND must be auto, compiled, or python, "
                       f"not {_requested!r}")

if _requested == "python":
    kernels = _kernels_py
else:
    try:
        from tidalflow import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise RuntimeError("TIDALFLOW_BACKEND=compiled but the compiled "
                               "kernels are not installed") from None
        kernels = _kernels_py

BACKEND_NAME: str = kernels.BACKEND_NAME


def available_backends():
    """Names of kernel implementations importable in this environment."""
    names = ["python"]
    try:
        from tidalflow import _kernels  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
