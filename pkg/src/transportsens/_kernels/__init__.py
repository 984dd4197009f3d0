"""Solver kernels with a compiled fast path.

The Cython extension `_core` implements the two inner-loop solvers (entropy
balancing dual Newton and IRLS logistic regression). It is selected at import
when available; otherwise the NumPy reference implementations are used. Set
``TRANSPORTSENS_PURE_PYTHON=1`` to force the fallback (used by the kernel
benchmark and backend-agreement tests).
"""

from __future__ import annotations

import os

from transportsens._kernels import numpy_backend

if os.environ.get("TRANSPORTSENS_PURE_PYTHON", "") not in ("", "0"):
    _impl = numpy_backend
else:
    try:
        from transportsens._kernels import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = numpy_backend

BACKEND: str = _impl.NAME
entropy_balance = _impl.entropy_balance
logistic_irls = _impl.logistic_irls

__all__ = ["BACKEND", "entropy_balance", "logistic_irls", "numpy_backend"]
