"""Numeric kernels with a compiled fast path.

At import time the Cython extension (``clmeta.kernels._fused``) is
preferred; if it is not built, the pure-numpy reference backend is used.
Set ``CLMETA_KERNELS=numpy`` or ``CLMETA_KERNELS=compiled`` to force a
backend (forcing ``compiled`` raises if the extension is missing).
``benchmarks/kernels_bench.py`` compares the two.
"""

from __future__ import annotations

import os

from . import _ref

_FORCE = os.environ.get("CLMETA_KERNELS", "").strip().lower()

if _FORCE in ("numpy", "py", "ref"):
    _impl = _ref
    BACKEND = "numpy"
elif _FORCE in ("compiled", "c", "fused"):
    from . import _fused as _impl  # type: ignore[no-redef]

    BACKEND = "compiled"
else:
    try:
        from . import _fused as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _ref
        BACKEND = "numpy"

softmax_rows = _impl.softmax_rows
softmax_rows_bwd = _impl.softmax_rows_bwd
layernorm = _impl.layernorm
layernorm_bwd = _impl.layernorm_bwd
tanh_bwd = _impl.tanh_bwd
relu_bwd = _impl.relu_bwd
adamw_update = _impl.adamw_update
scatter_add_rows = _impl.scatter_add_rows

reference = _ref


def compiled_backend():
    """The compiled module, or None when the extension is not built."""
    try:
        from . import _fused
    except ImportError:
        return None
    return _fused
