"""Convolution kernels with a numba fast path and a pure-numpy fallback.

The 2-D convolutions dominate runtime (patch encoder + grid autoregressor),
so they get hand-written numba implementations. Backend selection:

* ``PATCHCPC_BACKEND=numba``  force the numba kernels (error if unavailable)
* ``PATCHCPC_BACKEND=numpy``  force the pure-numpy im2col kernels
* unset / ``auto``            numba when importable, numpy otherwise

Both backends compute the same quantities; they may differ in float32
low-order bits because summation order differs. ``benchmarks/bench_kernels.py``
compares their throughput.
"""

import os

from . import numpy_backend
from ..errors import ConfigurationError

_FLAG = os.environ.get("PATCHCPC_BACKEND", "auto").strip().lower()

try:
    from . import numba_backend

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_backend = None
    _HAVE_NUMBA = False

if _FLAG in ("", "auto"):
    _ACTIVE = numba_backend if _HAVE_NUMBA else numpy_backend
elif _FLAG == "numba":
    if not _HAVE_NUMBA:
        raise ConfigurationError(
            "PATCHCPC_BACKEND=numba but numba is not importable"
        )
    _ACTIVE = numba_backend
elif _FLAG == "numpy":
    _ACTIVE = numpy_backend
else:
    raise ConfigurationError(
        f"PATCHCPC_BACKEND must be 'auto', 'numba' or 'numpy', got {_FLAG!r}"
    )


def active_backend() -> str:
    """Name of the kernel backend in force for this process."""
    return "numba" if _ACTIVE is numba_backend else "numpy"


conv2d_forward = _ACTIVE.conv2d_forward
conv2d_backward_dx = _ACTIVE.conv2d_backward_dx
conv2d_backward_dw = _ACTIVE.conv2d_backward_dw
