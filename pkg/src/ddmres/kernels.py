"""Kernel selection: the compiled extension when built, pure Python otherwise.

Set ``DDMRES_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("DDMRES_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

p1conf_sweep = _impl.p1conf_sweep
backtrace_maps = _impl.backtrace_maps
face_roles = _kernels_py.face_roles
