"""Hot encode kernels with a compiled core and a numpy fallback.

The compiled extension (``gic.kernels._native``) is used when it imported
successfully and ``GIC_NO_NATIVE`` is unset; otherwise the pure-numpy
reference implementation serves. Both expose the same two functions:

``encode_forward(W, X, alpha, mu, log_sigma) -> (F, cache)``
``encode_backward(cache, gF) -> (gX, galpha, gmu, glog_sigma)``
"""

import os

from . import reference

if os.environ.get("GIC_NO_NATIVE"):
    _impl = reference
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = reference

encode_forward = _impl.encode_forward
encode_backward = _impl.encode_backward
BACKEND = "native" if _impl is not reference else "reference"


def backend_name() -> str:
    return BACKEND
