"""Pick the compiled kernels when importable, else the numpy fallback.

Set ``MSDIFFEO_PURE=1`` to force the fallback.
"""
import os

from . import _fallback

fallback = _fallback
compiled = None

if not os.environ.get("MSDIFFEO_PURE"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

kernels = compiled if compiled is not None else fallback
NAME = "cython" if compiled is not None else "numpy"
