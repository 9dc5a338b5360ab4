"""Backend selection for the hot kernels.

Set ``RETREEVER_BACKEND=numpy`` to force the pure-numpy path (useful for
debugging and as the comparison baseline in benchmarks/kernel_bench.py);
``RETREEVER_BACKEND=numba`` requires numba and fails loudly if it is
missing. Default: numba if importable, numpy otherwise.
"""

from __future__ import annotations

import os

from . import numpy_backend

_CHOICE = os.environ.get("RETREEVER_BACKEND", "").strip().lower()

if _CHOICE not in ("", "numba", "numpy"):
    raise ValueError(
        f"RETREEVER_BACKEND={_CHOICE!r} not recognized (expected 'numba' or 'numpy')"
    )

if _CHOICE == "numpy":
    _impl = numpy_backend
    _BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        _BACKEND = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise
        _impl = numpy_backend
        _BACKEND = "numpy"


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _BACKEND


softmax_forward = _impl.softmax_forward
softmax_backward = _impl.softmax_backward
log_softmax_forward = _impl.log_softmax_forward
log_softmax_backward = _impl.log_softmax_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
softplus_forward = _impl.softplus_forward
softplus_backward = _impl.softplus_backward
adam_update = _impl.adam_update
scatter_add_rows = _impl.scatter_add_rows
