"""Hot loops with a compiled backend and a pure Python fallback.

The compiled extension is used when it imports; set ``HMMLAB_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("HMMLAB_PURE_PYTHON", "") in ("", "0"):
    _impl = compiled_backend
    BACKEND = "cython"
else:
    _impl = python_backend
    BACKEND = "python"

tridiag_solve = _impl.tridiag_solve
viterbi_forward = _impl.viterbi_forward
tv_forward = _impl.tv_forward
tv_backtrack = _impl.tv_backtrack

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "tridiag_solve",
    "tv_backtrack",
    "tv_forward",
    "viterbi_forward",
]
