"""Hot numeric kernels with a numba and a pure-NumPy implementation.

The numba backend is the default when numba imports cleanly.  Set
``VIDSYNC_BACKEND=numpy`` to force the NumPy fallback, or
``VIDSYNC_BACKEND=numba`` to fail loudly when numba is unavailable.
Both backends share one signature set; ``benchmarks/bench_kernels.py``
compares them.
"""

import os

from . import numpy_ops

_requested = os.environ.get("VIDSYNC_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    raise ValueError(
        f"VIDSYNC_BACKEND must be 'numpy' or 'numba', got {_requested!r}"
    )

if _requested == "numpy":
    _impl = numpy_ops
    BACKEND = "numpy"
else:
    try:
        from . import numba_ops as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_ops
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_params = _impl.conv2d_backward_params
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
correlate1d_rows = _impl.correlate1d_rows
correlate1d_cols = _impl.correlate1d_cols
flow_update_matrices = _impl.flow_update_matrices
solve_flow = _impl.solve_flow

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_params",
    "maxpool2_forward",
    "maxpool2_backward",
    "correlate1d_rows",
    "correlate1d_cols",
    "flow_update_matrices",
    "solve_flow",
]
