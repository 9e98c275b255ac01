"""Selects the stream-kernel backend at import time.

The compiled extension is preferred; the numpy fallback is used when the
extension is unavailable or when ``NEEDLEMETRICS_PURE=1`` is set (the
benchmark uses this to compare the two).
"""

import os

if os.environ.get("NEEDLEMETRICS_PURE") == "1":
    from needlemetrics import _kernels_py as _impl
else:
    try:
        from needlemetrics import _kernels_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        from needlemetrics import _kernels_py as _impl

BACKEND = _impl.BACKEND
rel_angles = _impl.rel_angles
slerp_resample = _impl.slerp_resample
path_length = _impl.path_length
