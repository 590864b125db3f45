"""Backend selection for the closed-loop RK4 kernel.

The compiled ``_core`` extension is used when it imports; otherwise the numpy
``_fallback``. Setting ``ELCONSENSUS_PURE=1`` forces the fallback.
"""

import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:
    from . import _core
except ImportError:  # extension not built
    _core = None
else:
    BACKENDS["compiled"] = _core

if _core is not None and os.environ.get("ELCONSENSUS_PURE", "") in ("", "0"):
    DEFAULT = "compiled"
else:
    DEFAULT = "python"


def get_backend(name: str | None = None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
