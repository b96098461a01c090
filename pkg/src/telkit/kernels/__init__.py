"""Kernel backend selection.

The conv/pool inner loops exist twice: a Cython extension (built at install
time) and a pure-numpy reference.  The extension is used when importable;
set TELKIT_KERNELS=numpy or TELKIT_KERNELS=cython to force a side.
"""

import os

_requested = os.environ.get("TELKIT_KERNELS", "auto")
if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"TELKIT_KERNELS must be auto|cython|numpy, got {_requested!r}")

BACKEND = "numpy"
if _requested in ("auto", "cython"):
    try:
        from ._native import col2im, im2col, maxpool_bwd, maxpool_fwd  # noqa: F401

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise

if BACKEND == "numpy":
    from .reference import col2im, im2col, maxpool_bwd, maxpool_fwd  # noqa: F401
