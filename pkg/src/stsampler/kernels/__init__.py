"""Kernel backend selection.

Convolutions go through im2col + GEMM (numpy/BLAS) in every
configuration; measured at this package's shapes, BLAS beats the direct
compiled loops once channel counts grow (see benchmarks/bench_kernels.py).
The resampling and top-k kernels, which are gather/scatter bound, come
from the compiled extension (_ckernels, built from _ckernels.pyx) when it
is importable and from the numpy fallback otherwise.

Set STSAMPLER_KERNELS=py or =c to force the resampling/top-k choice;
=c raises if the extension is missing.
"""

import os

from . import numpy_backend

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_choice = os.environ.get("STSAMPLER_KERNELS", "auto").lower()
if _choice not in ("auto", "c", "py"):
    raise ValueError(f"STSAMPLER_KERNELS must be auto, c or py, got {_choice!r}")
if _choice == "c" and _ckernels is None:
    raise ImportError("STSAMPLER_KERNELS=c but the compiled extension is not built")

_impl = _ckernels if (_ckernels is not None and _choice != "py") else numpy_backend


def backend_name() -> str:
    """Resampling/top-k backend in use: 'c' or 'py'."""
    return "py" if _impl is numpy_backend else "c"


def available_backends():
    """List of importable backend modules, numpy fallback first."""
    mods = [numpy_backend]
    if _ckernels is not None:
        mods.append(_ckernels)
    return mods


conv2d_forward = numpy_backend.conv2d_forward
conv2d_backward_input = numpy_backend.conv2d_backward_input
conv2d_backward_weight = numpy_backend.conv2d_backward_weight
resize_forward = _impl.resize_forward
resize_backward = _impl.resize_backward
warp_forward = _impl.warp_forward
warp_backward = _impl.warp_backward
topk_sample = _impl.topk_sample
topk_backward = _impl.topk_backward
