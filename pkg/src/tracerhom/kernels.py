"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``TRACERHOM_BACKEND=python``
to force the numpy fallback.  ``use(name)`` switches at run time (tests and the
benchmark compare both).
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = "compiled" if _compiled is not None else "python"
if os.environ.get("TRACERHOM_BACKEND", "").lower() == "python":
    _active = "python"


def available() -> list[str]:
    return sorted(_BACKENDS)


def backend() -> str:
    return _active


def use(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available()}")
    _active = name


def get(name: str | None = None):
    return _BACKENDS[name or _active]


def eps_chunk(*args, backend: str | None = None):
    return get(backend).eps_chunk(*args)


def aux_chunk(*args, backend: str | None = None):
    return get(backend).aux_chunk(*args)
