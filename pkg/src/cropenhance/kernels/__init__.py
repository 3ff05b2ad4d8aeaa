"""Kernel backend selection.

Two interchangeable implementations of the hot inner loops exist:

* ``_native`` - Cython-compiled loops (built by setup.py).
* ``numpy_backend`` - vectorized numpy, always available.

``benchmarks/bench_kernels.py`` compares them. On the shapes this
project trains, the compiled loops win pooling and bilinear sampling by
5-11x (irregular memory, no BLAS mapping), while im2col+BLAS wins the
convolutions by a wide margin. The default ``auto`` backend therefore
mixes the two: native pooling/sampling, numpy convolutions. Set
``CROPENHANCE_KERNELS`` to ``native`` or ``numpy`` to force a single
implementation (``native`` raises if the extension is missing).

Each backend choice is individually deterministic, but the backends may
differ from each other in the last float ulp because summation orders
differ (BLAS versus explicit loops). Tests therefore never compare
across backends bit-exactly, only within tolerances.
"""

import os

from . import numpy_backend

try:
    from . import _native
except ImportError:
    _native = None

CONV_FUNCTIONS = (
    "conv2d_forward",
    "conv2d_backward_weight",
    "conv2d_backward_input",
)

POINTWISE_FUNCTIONS = (
    "maxpool2d_forward",
    "maxpool2d_backward",
    "avgpool2d_forward",
    "avgpool2d_backward",
    "bilinear_forward",
    "bilinear_backward",
)

KERNEL_FUNCTIONS = CONV_FUNCTIONS + POINTWISE_FUNCTIONS

_backend_name = None


def available_backends():
    names = ["numpy", "auto"]
    if _native is not None:
        names.insert(0, "native")
    return names


def set_backend(name):
    """Bind the named backend's kernel functions onto this module."""
    global _backend_name
    if name == "native":
        if _native is None:
            raise RuntimeError(
                "native kernel backend requested but the compiled extension "
                "is not available; reinstall with a C compiler or set "
                "CROPENHANCE_KERNELS=numpy"
            )
        table = {fn: getattr(_native, fn) for fn in KERNEL_FUNCTIONS}
    elif name == "numpy":
        table = {fn: getattr(numpy_backend, fn) for fn in KERNEL_FUNCTIONS}
    elif name == "auto":
        # Measured split (see module docstring / benchmarks).
        table = {fn: getattr(numpy_backend, fn) for fn in KERNEL_FUNCTIONS}
        if _native is not None:
            for fn in POINTWISE_FUNCTIONS:
                table[fn] = getattr(_native, fn)
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    globals().update(table)
    _backend_name = name


def backend_name():
    return _backend_name


set_backend(os.environ.get("CROPENHANCE_KERNELS", "auto"))
