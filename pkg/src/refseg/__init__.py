"""Dual ConvLSTM referring-image-segmentation library.

A word-attentive multimodal encoder and a spatially-attentive multi-level
decoder built on a small reverse-mode autodiff tensor engine, plus the
training loop, synthetic dataset, metrics, and CLI around them.

REFSEG_THREADS caps the BLAS worker pools; it must be read before numpy
first loads, so this module propagates it to the usual thread-count env
vars ahead of any numeric import.
"""

import os as _os

_threads = _os.environ.get("REFSEG_THREADS")
if _threads:
    if _threads.isdigit() and int(_threads) >= 1:
        for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                     "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
            _os.environ[_var] = _threads
    else:
        import warnings as _warnings
        _warnings.warn(f"REFSEG_THREADS={_threads!r} is not a positive integer; ignored")

__version__ = "0.1.0"

from .tensor import Tensor, backward, grad_check, no_grad  # noqa: F401
