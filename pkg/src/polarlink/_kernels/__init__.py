"""Hot-loop kernel backend selection.

The compiled Cython extension is used when available; setting the environment
variable ``POLARLINK_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

if os.environ.get("POLARLINK_PURE_PYTHON") == "1":
    from . import _purepy as _impl
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _purepy as _impl

BACKEND = _impl.BACKEND
rotation_walk = _impl.rotation_walk
greedy_match = _impl.greedy_match

__all__ = ["BACKEND", "rotation_walk", "greedy_match"]
