"""Kernel selection: compiled Cython extension when available, numpy fallback otherwise.

Set ``GENCOV_PURE_PYTHON=1`` to force the fallback (useful for debugging and
for benchmarking the two paths against each other).  ``BACKEND`` records which
path was picked at import time.
"""

from __future__ import annotations

import os

from . import _ref

__all__ = [
    "BACKEND",
    "mar_filter",
    "dar_residual_filter",
    "dar_sim_path",
    "gamma_stack",
]

BACKEND = "python"
mar_filter = _ref.mar_filter
dar_residual_filter = _ref.dar_residual_filter
dar_sim_path = _ref.dar_sim_path
gamma_stack = _ref.gamma_stack

if os.environ.get("GENCOV_PURE_PYTHON", "").strip() not in {"1", "true", "yes"}:
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        mar_filter = _core.mar_filter
        dar_residual_filter = _core.dar_residual_filter
        dar_sim_path = _core.dar_sim_path
        gamma_stack = _core.gamma_stack
