"""Non-differentiable image kernels with a compiled fast path.

The Cython extension ``skyreg._ext._warpcore`` is used when it was built and
``SKYREG_PURE_PYTHON`` is unset; otherwise the numpy implementation below
serves the same contract. ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

import numpy as np


def _warp_numpy(src, h, out_h, out_w, origin_u=0.0, origin_v=0.0):
    height, width = src.shape
    vv, uu = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    x = uu + origin_u
    y = vv + origin_v
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    finite = np.abs(w) >= 1e-9
    w = np.where(finite, w, 1.0)
    pu = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
    pv = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    mask = finite & (pu >= 0) & (pu <= width - 1) & (pv >= 0) & (pv <= height - 1)
    pu = np.where(mask, pu, 0.0)
    pv = np.where(mask, pv, 0.0)
    j0 = np.minimum(np.floor(pu).astype(np.intp), max(width - 2, 0))
    i0 = np.minimum(np.floor(pv).astype(np.intp), max(height - 2, 0))
    j1 = j0 + 1 if width > 1 else j0
    i1 = i0 + 1 if height > 1 else i0
    fu = pu - j0
    fv = pv - i0
    out = ((1.0 - fv) * ((1.0 - fu) * src[i0, j0] + fu * src[i0, j1])
           + fv * ((1.0 - fu) * src[i1, j0] + fu * src[i1, j1]))
    out = np.where(mask, out, 0.0)
    return out, mask


try:
    if os.environ.get("SKYREG_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from skyreg._ext._warpcore import warp_bilinear as _warp_compiled
    BACKEND = "cython"
except ImportError:
    _warp_compiled = None
    BACKEND = "numpy"


def warp_bilinear(src, h, out_shape, origin=(0.0, 0.0), backend: str | None = None):
    """Bilinear inverse warp of a 2-D float image.

    Output pixel ``(i, j)`` sits at ``x = (j + origin[0], i + origin[1])`` and
    takes the value of ``src`` at ``h @ x``. Returns ``(values, mask)``; samples
    outside ``src`` are 0 with mask False.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    out_h, out_w = (int(s) for s in out_shape)
    backend = backend or BACKEND
    if backend == "cython":
        if _warp_compiled is None:
            raise RuntimeError("compiled kernel not available")
        return _warp_compiled(src, h, out_h, out_w, float(origin[0]), float(origin[1]))
    return _warp_numpy(src, h, out_h, out_w, float(origin[0]), float(origin[1]))
