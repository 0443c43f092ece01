# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bilinear homography warp. Mirrors skyreg.kernels._warp_numpy."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


def warp_bilinear(const double[:, ::1] src, const double[:, ::1] h,
                  Py_ssize_t out_h, Py_ssize_t out_w,
                  double origin_u=0.0, double origin_v=0.0):
    cdef Py_ssize_t height = src.shape[0], width = src.shape[1]
    out_arr = np.zeros((out_h, out_w), dtype=np.float64)
    mask_arr = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[:, ::1] mask = mask_arr
    cdef Py_ssize_t i, j, i0, j0, i1, j1
    cdef double x, y, pu, pv, w, fu, fv
    cdef double h00 = h[0, 0], h01 = h[0, 1], h02 = h[0, 2]
    cdef double h10 = h[1, 0], h11 = h[1, 1], h12 = h[1, 2]
    cdef double h20 = h[2, 0], h21 = h[2, 1], h22 = h[2, 2]
    cdef double umax = width - 1, vmax = height - 1
    with nogil:
        for i in range(out_h):
            y = i + origin_v
            for j in range(out_w):
                x = j + origin_u
                w = h20 * x + h21 * y + h22
                if fabs(w) < 1e-9:
                    continue
                pu = (h00 * x + h01 * y + h02) / w
                pv = (h10 * x + h11 * y + h12) / w
                if pu < 0 or pu > umax or pv < 0 or pv > vmax:
                    continue
                j0 = <Py_ssize_t>floor(pu)
                i0 = <Py_ssize_t>floor(pv)
                if j0 > width - 2:
                    j0 = width - 2 if width > 1 else 0
                if i0 > height - 2:
                    i0 = height - 2 if height > 1 else 0
                j1 = j0 + 1 if width > 1 else j0
                i1 = i0 + 1 if height > 1 else i0
                fu = pu - j0
                fv = pv - i0
                out[i, j] = ((1.0 - fv) * ((1.0 - fu) * src[i0, j0] + fu * src[i0, j1])
                             + fv * ((1.0 - fu) * src[i1, j0] + fu * src[i1, j1]))
                mask[i, j] = 1
    return out_arr, mask_arr.astype(bool)
