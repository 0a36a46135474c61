"""Kernel backend selection.

The compiled extension is used when it imports; set ``ROTD_BACKEND=python``
to force the NumPy fallback.
"""
import os

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

DEFAULT = os.environ.get("ROTD_BACKEND") or ("compiled" if _compiled is not None else "python")


def get(name=None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def available():
    return sorted(BACKENDS)
