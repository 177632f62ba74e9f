"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when the
environment variable ``DIZIKIT_PURE_PYTHON`` is set to a non-empty value
other than ``0``) the pure Python fallback is loaded.  ``BACKEND`` names the
active one.
"""

import os

from . import _pykernels


def _want_pure() -> bool:
    return os.environ.get("DIZIKIT_PURE_PYTHON", "") not in ("", "0")


try:
    if _want_pure():
        raise ImportError("pure Python kernels requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

viterbi = _impl.viterbi
forward_backward = _impl.forward_backward
sgns_epoch = _impl.sgns_epoch
cbow_epoch = _impl.cbow_epoch


def available_backends() -> dict:
    """Map of backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
