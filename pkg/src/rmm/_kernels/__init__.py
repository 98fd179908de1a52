"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension (``_ckernels``) is preferred. Set ``RMM_PURE_PYTHON=1``
to force the numpy versions; :data:`BACKEND` reports which one is active.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("RMM_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _f64c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(xpad, k, stride, ho, wo):
    return _impl.im2col(_f64c(xpad), k, stride, ho, wo)


def col2im(cols, n, c, hp, wp, k, stride, ho, wo):
    return _impl.col2im(_f64c(cols), n, c, hp, wp, k, stride, ho, wo)


def haar_analysis(x):
    return _impl.haar_analysis(_f64c(x))


def haar_synthesis(bands):
    return _impl.haar_synthesis(_f64c(bands))


__all__ = ["BACKEND", "im2col", "col2im", "haar_analysis", "haar_synthesis"]
