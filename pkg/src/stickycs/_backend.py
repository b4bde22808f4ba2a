"""Kernel backend selection: compiled extension if importable, NumPy otherwise.

Set STICKYCS_PURE_PYTHON=1 to force the fallback (used by the benchmark and
the backend-agreement tests).
"""

from __future__ import annotations

import os

if os.environ.get("STICKYCS_PURE_PYTHON", "") == "1":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
accel = _impl.accel
prim_sum = _impl.prim_sum
