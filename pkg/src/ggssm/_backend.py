"""Kernel selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin takes over. ``GGSSM_BACKEND=python`` (or ``compiled``) forces a choice.
"""

from __future__ import annotations

import contextlib
import os
import warnings

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

AVAILABLE = {"python": _kernels_py}
if _kernels_c is not None:
    AVAILABLE["compiled"] = _kernels_c


def _initial():
    wanted = os.environ.get("GGSSM_BACKEND", "auto").strip().lower()
    if wanted in ("", "auto"):
        return _kernels_c or _kernels_py
    if wanted not in ("python", "compiled"):
        raise ValueError(f"GGSSM_BACKEND must be auto, python or compiled, got {wanted!r}")
    if wanted == "compiled" and _kernels_c is None:
        warnings.warn("compiled kernels requested but not built; using python", RuntimeWarning)
        return _kernels_py
    return AVAILABLE[wanted]


kernels = _initial()


def name() -> str:
    return kernels.BACKEND


def set_backend(which: str) -> None:
    global kernels
    if which not in AVAILABLE:
        raise ValueError(f"backend {which!r} is not available (have {sorted(AVAILABLE)})")
    kernels = AVAILABLE[which]


@contextlib.contextmanager
def use(which: str):
    """Temporarily switch kernels, e.g. for backend comparisons."""
    global kernels
    saved = kernels
    set_backend(which)
    try:
        yield kernels
    finally:
        kernels = saved
