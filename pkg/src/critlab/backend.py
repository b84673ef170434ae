"""Selects the path kernel: the compiled extension when importable, else numpy.

Set ``CRITLAB_BACKEND=python`` to force the numpy implementation.
"""
from __future__ import annotations

import os

from . import _fallback

_forced = os.environ.get("CRITLAB_BACKEND", "").strip().lower()

if _forced == "python":
    _ext = None
else:
    try:
        from . import _kernels as _ext
    except ImportError:
        if _forced == "compiled":
            raise
        _ext = None

NAME = "compiled" if _ext is not None else "python"


def get(name: str | None = None):
    """Kernel module by name (``"compiled"`` or ``"python"``); default is the active one."""
    name = name or NAME
    if name == "python":
        return _fallback
    if name == "compiled":
        if _ext is None:
            raise ImportError("compiled kernel is not available; build the extension")
        return _ext
    raise ValueError(f"unknown backend {name!r}")


def available() -> list:
    return ["python"] + (["compiled"] if _ext is not None else [])
