"""Pick the compiled kernels when available, the numpy fallback otherwise.

Set ``FINESPARSE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("FINESPARSE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _active

    BACKEND = "compiled"
except ImportError:
    _active = _fallback
    BACKEND = "python"

hilbert_keys = _active.hilbert_keys
block_sparse_attention = _active.block_sparse_attention


def available_backends():
    """Name -> module for every backend importable in this environment."""
    found = {"python": _fallback}
    try:
        from . import _kernels

        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
