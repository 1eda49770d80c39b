"""E-step kernel selection: compiled extension when built, numpy otherwise.

Set SVARSS_BACKEND=python or SVARSS_BACKEND=compiled to force a choice.
"""
from __future__ import annotations

import os

from . import _estep_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_ENV_VAR = "SVARSS_BACKEND"


def available_backends() -> tuple[str, ...]:
    if _compiled is not None:
        return ("compiled", "python")
    return ("python",)


def default_backend() -> str:
    forced = os.environ.get(_ENV_VAR)
    if forced:
        if forced not in ("python", "compiled"):
            raise ValueError(f"{_ENV_VAR} must be 'python' or 'compiled', got {forced!r}")
        if forced == "compiled" and _compiled is None:
            raise ImportError(
                "compiled backend requested via SVARSS_BACKEND but the "
                "svarss._kernels extension is not built"
            )
        return forced
    return "compiled" if _compiled is not None else "python"


def estep_group_fn(backend: str):
    """The group kernel for a backend name ('python' or 'compiled')."""
    if backend == "python":
        return _estep_py.estep_group
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("svarss._kernels extension is not built")
        return _compiled.estep_group
    raise ValueError(f"unknown backend {backend!r}")
