"""Backend selection for the hot loops.

The Cython extension is used when it is importable; setting the environment
variable ``ANDERSON_DEPHASE_PURE=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _fallback

fallback = _fallback

if os.environ.get("ANDERSON_DEPHASE_PURE") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

compiled = _impl if BACKEND == "cython" else None

rk4_advance = _impl.rk4_advance
lawson_advance = _impl.lawson_advance
quadratic_form_prefix = _impl.quadratic_form_prefix
coupling_matrix_prefix = _impl.coupling_matrix_prefix
peak_prominences = _impl.peak_prominences

__all__ = [
    "BACKEND",
    "rk4_advance",
    "lawson_advance",
    "quadratic_form_prefix",
    "coupling_matrix_prefix",
    "peak_prominences",
]
