"""Kernel backend selection: compiled extension when importable, pure Python otherwise.

Set ``RATING_FORGE_PURE=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("RATING_FORGE_PURE") != "1":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

pav = _impl.pav
partition_dp = _impl.partition_dp
max_ic_violation = _impl.max_ic_violation

__all__ = ["BACKEND", "pav", "partition_dp", "max_ic_violation"]
