"""Select the compiled core when importable, else the numpy fallback.

``ERGOKIT_BACKEND=python`` forces the fallback; ``ERGOKIT_BACKEND=compiled``
makes a missing extension an import error instead of a silent downgrade.
"""

import os

from . import _fallback

_choice = os.environ.get("ERGOKIT_BACKEND", "auto").lower()
_compiled = None
if _choice != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        if _choice == "compiled":
            raise
        _compiled = None

kernels = _compiled if _compiled is not None else _fallback
NAME = "compiled" if _compiled is not None else "python"


def get(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None for default)."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("ergokit._core is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def has_compiled():
    return _compiled is not None
