"""Gated peephole-LSTM recurrence over a padded batch.

The compiled core (``_recurrence`` with Cython + BLAS, plus ``_phase``) is
used when it imports; otherwise the numpy implementation in ``_fallback`` is.  Setting
``HETSEQ_PURE_PYTHON=1`` forces the fallback.
"""

import os

from hetseq.kernel import _fallback

fallback = _fallback
compiled = None
try:
    from hetseq.kernel import _compiled as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and not os.environ.get("HETSEQ_PURE_PYTHON"):
    BACKEND = "cython"
    _impl = compiled
else:
    BACKEND = "python"
    _impl = _fallback

forward = _impl.forward
backward = _impl.backward
phase_forward = _impl.phase_forward
phase_backward = _impl.phase_backward


def get_backend(name=None):
    """Module implementing the kernel functions for ``name`` (default: active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled recurrence kernel is not built")
        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")
