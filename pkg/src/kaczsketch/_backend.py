"""Pick the compiled kernels when they are importable, else the numpy ones.

Set ``KACZSKETCH_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("KACZSKETCH_BACKEND", "").lower() == "python":
        raise ImportError("pure-python backend requested")
    from . import _kernels
except ImportError:
    _kernels = None

BACKENDS = {"python": _fallback}
if _kernels is not None:
    BACKENDS["cython"] = _kernels

DEFAULT = "cython" if _kernels is not None else "python"


def get(name=None):
    """Return the kernel module for `name` (``None`` means the default)."""
    if name is None:
        name = DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
