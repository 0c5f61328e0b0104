"""Backend selection for the fused objective kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``KDSTEAL_KERNELS=python`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("KDSTEAL_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

log_softmax_rows = _impl.log_softmax_rows
distill_objective = _impl.distill_objective
contrast_objective = _impl.contrast_objective

__all__ = ["BACKEND", "log_softmax_rows", "distill_objective", "contrast_objective"]
