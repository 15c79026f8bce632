"""Hot-kernel backend, chosen once at import.

The compiled extension is preferred; the numpy module is the fallback. Set
``STTRAJ_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

if os.environ.get("STTRAJ_PURE_PYTHON", "").lower() in ("1", "true", "yes") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]
conv_time_forward = _impl.conv_time_forward
conv_time_backward = _impl.conv_time_backward
mmd_rbf = _impl.mmd_rbf


def get_backend(name):
    """Return the kernel module registered under ``name``."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise LookupError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None
