"""Hot-kernel backend selection.

The per-timestep layer kernels exist twice: a compiled extension
(`_core`, built from Cython) and a NumPy fallback with identical
semantics. The compiled core is preferred when importable; setting the
environment variable ECHOSPIKE_PURE_PYTHON forces the fallback. The
active choice is exposed as BACKEND, and `get_backend` returns a specific
implementation by name (used by the benchmark and the equivalence tests).
"""

import os

from . import fallback

if os.environ.get("ECHOSPIKE_PURE_PYTHON"):
    _impl = fallback
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = fallback

BACKEND = _impl.NAME


def available_backends() -> list[str]:
    names = [fallback.NAME]
    try:
        from . import _core

        names.insert(0, _core.NAME)
    except ImportError:
        pass
    return names


def get_backend(name: str | None = None):
    """Return a kernel module by name, or the active one when name is None."""
    if name is None:
        return _impl
    if name == fallback.NAME:
        return fallback
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend {name!r}")
