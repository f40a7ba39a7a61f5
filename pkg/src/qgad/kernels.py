"""Kernel dispatch: compiled extension when importable, Python otherwise.

Set ``QGAD_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels
from ._pykernels import FIRST_MATCH, TRUE_COUNT, TRUE_RATIO

_ext = None
if os.environ.get("QGAD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _pykernels

scan_candidates = _impl.scan_candidates
lz76 = _impl.lz76

POLICIES = {"first_match": FIRST_MATCH, "true_count": TRUE_COUNT, "true_ratio": TRUE_RATIO}

__all__ = ["BACKEND", "POLICIES", "scan_candidates", "lz76"]
