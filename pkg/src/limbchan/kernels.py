"""Hot-loop kernels, compiled when available.

The compiled module is picked at import time; set ``LIMBCHAN_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _kernels_py

if os.environ.get("LIMBCHAN_PURE_PYTHON") == "1":
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    gru_forward = _compiled.gru_forward
    gru_backward = _compiled.gru_backward
    BACKEND = "cython"
else:
    gru_forward = _kernels_py.gru_forward
    gru_backward = _kernels_py.gru_backward
    BACKEND = "numpy"

im2col = _kernels_py.im2col
col2im = _kernels_py.col2im
