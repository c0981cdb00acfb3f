"""Backend selection for the per-path reduction kernels.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``LEVYFIELD_PURE_PYTHON`` is set to a non-empty value,
the numpy fallback is used. ``BACKEND`` names the active implementation.
"""

import os

from . import _kernels_py

if os.environ.get("LEVYFIELD_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

rect_sums = _impl.rect_sums
grid_sums = _impl.grid_sums

__all__ = ["BACKEND", "rect_sums", "grid_sums"]
