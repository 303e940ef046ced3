# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gated peephole-LSTM recurrence; same contract as ``_fallback``.

Recurrent products go through BLAS dgemm (row-major arrays passed as their
column-major transposes); neuron arithmetic is the vectorised C in
``_cell.h``.  The GIL is released for the whole time loop.
"""

import numpy as np

from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm


cdef extern from "_cell.h" nogil:
    void cell_forward(int B, int H, const double *z,
                      const double *c_prev, const double *h_prev, const double *j,
                      const double *w_ic, const double *w_fc, const double *w_oc,
                      double *c_new, double *h_new,
                      double *gates, double *ctil, double *htil)
    void cell_forward_light(int B, int H, const double *z,
                            const double *c_prev, const double *h_prev, const double *j,
                            const double *w_ic, const double *w_fc, const double *w_oc,
                            double *c_new, double *h_new)
    void cell_backward(int B, int H,
                       const double *c_prev, const double *h_prev, const double *j,
                       const double *gates, const double *ctil, const double *htil,
                       const double *w_ic, const double *w_fc, const double *w_oc,
                       double *dc, double *dh, double *dz, double *dj,
                       double *dw_ic, double *dw_fc, double *dw_oc)


def forward(double[:, :, ::1] zx, double[:, :, ::1] j, double[:, ::1] w_h,
            double[::1] w_ic, double[::1] w_fc, double[::1] w_oc, bint keep=True):
    cdef int T = zx.shape[0], B = zx.shape[1], H4 = zx.shape[2]
    cdef int H = H4 // 4
    cdef int t
    cdef char tr = b'T', nt = b'N'
    cdef double one = 1.0

    cs_arr = np.zeros((T + 1, B, H))
    hs_arr = np.zeros((T + 1, B, H))
    z_arr = np.empty((B, H4))
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, ::1] z = z_arr
    cdef double[:, :, ::1] gates
    cdef double[:, :, ::1] ctil
    cdef double[:, :, ::1] htil
    gates_arr = ctil_arr = htil_arr = None
    if keep:
        gates_arr = np.empty((T, B, H4))
        ctil_arr = np.empty((T, B, H))
        htil_arr = np.empty((T, B, H))
        gates = gates_arr
        ctil = ctil_arr
        htil = htil_arr

    with nogil:
        for t in range(T):
            memcpy(&z[0, 0], &zx[t, 0, 0], B * H4 * sizeof(double))
            # z (B x 4H) += h_prev (B x H) . w_h^T
            dgemm(&tr, &nt, &H4, &B, &H, &one, &w_h[0, 0], &H,
                  &hs[t, 0, 0], &H, &one, &z[0, 0], &H4)
            if keep:
                cell_forward(B, H, &z[0, 0], &cs[t, 0, 0], &hs[t, 0, 0], &j[t, 0, 0],
                             &w_ic[0], &w_fc[0], &w_oc[0], &cs[t + 1, 0, 0], &hs[t + 1, 0, 0],
                             &gates[t, 0, 0], &ctil[t, 0, 0], &htil[t, 0, 0])
            else:
                cell_forward_light(B, H, &z[0, 0], &cs[t, 0, 0], &hs[t, 0, 0], &j[t, 0, 0],
                                   &w_ic[0], &w_fc[0], &w_oc[0], &cs[t + 1, 0, 0], &hs[t + 1, 0, 0])
    return cs_arr, hs_arr, gates_arr, ctil_arr, htil_arr


def backward(dh_last, dc_last, double[:, :, ::1] j, double[:, ::1] w_h,
             double[::1] w_ic, double[::1] w_fc, double[::1] w_oc,
             double[:, :, ::1] cs, double[:, :, ::1] hs, double[:, :, ::1] gates,
             double[:, :, ::1] ctil, double[:, :, ::1] htil):
    cdef int T = gates.shape[0], B = gates.shape[1], H4 = gates.shape[2]
    cdef int H = H4 // 4
    cdef int TB = T * B
    cdef int t
    cdef char tr = b'T', nt = b'N'
    cdef double one = 1.0

    dzx_arr = np.empty((T, B, H4))
    dj_arr = np.empty((T, B, H))
    dwh_arr = np.zeros((H4, H))
    dw_ic_arr = np.zeros(H)
    dw_fc_arr = np.zeros(H)
    dw_oc_arr = np.zeros(H)
    dh_arr = np.array(dh_last, dtype=np.float64, order="C", copy=True)
    dc_arr = np.array(dc_last, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] dzx = dzx_arr
    cdef double[:, :, ::1] dj = dj_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[::1] dw_ic = dw_ic_arr
    cdef double[::1] dw_fc = dw_fc_arr
    cdef double[::1] dw_oc = dw_oc_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dc = dc_arr

    with nogil:
        for t in range(T - 1, -1, -1):
            cell_backward(B, H, &cs[t, 0, 0], &hs[t, 0, 0], &j[t, 0, 0],
                          &gates[t, 0, 0], &ctil[t, 0, 0], &htil[t, 0, 0],
                          &w_ic[0], &w_fc[0], &w_oc[0],
                          &dc[0, 0], &dh[0, 0], &dzx[t, 0, 0], &dj[t, 0, 0],
                          &dw_ic[0], &dw_fc[0], &dw_oc[0])
            # dh (B x H) += dz (B x 4H) . w_h (4H x H)
            dgemm(&nt, &nt, &H, &B, &H4, &one, &w_h[0, 0], &H,
                  &dzx[t, 0, 0], &H4, &one, &dh[0, 0], &H)
        # dw_h (4H x H) = sum_t dz_t^T . h_prev_t, one product over all steps
        dgemm(&nt, &tr, &H, &H4, &TB, &one, &hs[0, 0, 0], &H,
              &dzx[0, 0, 0], &H4, &one, &dwh[0, 0], &H)
    return dzx_arr, dj_arr, dwh_arr, dw_ic_arr, dw_fc_arr, dw_oc_arr, dh_arr, dc_arr
