# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled phase gate over a (rows x neurons) grid; same contract as ``_fallback``.

Built without fast-math: the remainder and the branch tests must round
exactly like numpy so both backends agree on which piece every entry is in.
"""

import numpy as np

from libc.math cimport fmod


cdef inline double _phi(double x, double tau) nogil:
    # non-negative remainder, same rounding as numpy.mod for tau > 0
    cdef double m = fmod(x, tau)
    if m < 0:
        m += tau
    elif m == 0:
        m = 0.0
    return m / tau


def phase_forward(double[::1] times, double[::1] tau, double[::1] shift,
                  double[::1] r_on, double alpha):
    cdef Py_ssize_t R = times.shape[0], H = tau.shape[0], r, n
    cdef double phi, ron
    out = np.empty((R, H))
    cdef double[:, ::1] k = out
    with nogil:
        for r in range(R):
            for n in range(H):
                phi = _phi(times[r] - shift[n], tau[n])
                ron = r_on[n]
                if phi < 0.5 * ron:
                    k[r, n] = 2 * phi / ron
                elif phi < ron:
                    k[r, n] = 2 - 2 * phi / ron
                else:
                    k[r, n] = alpha * phi
    return out


def phase_backward(double[:, ::1] dk, double[::1] times, double[::1] tau,
                   double[::1] shift, double[::1] r_on, double alpha):
    cdef Py_ssize_t R = times.shape[0], H = tau.shape[0], r, n
    cdef double x, phi, ron, g, dphi
    d_tau_arr = np.zeros(H)
    d_shift_arr = np.zeros(H)
    d_r_arr = np.zeros(H)
    cdef double[::1] d_tau = d_tau_arr, d_shift = d_shift_arr, d_r = d_r_arr
    with nogil:
        for r in range(R):
            for n in range(H):
                g = dk[r, n]
                if g == 0:
                    continue
                x = times[r] - shift[n]
                phi = _phi(x, tau[n])
                ron = r_on[n]
                if phi < 0.5 * ron:
                    dphi = g * (2 / ron)
                    d_r[n] += g * (-2 * phi / (ron * ron))
                elif phi < ron:
                    dphi = g * (-2 / ron)
                    d_r[n] += g * (2 * phi / (ron * ron))
                else:
                    dphi = g * alpha
                d_tau[n] += dphi * (-x / (tau[n] * tau[n]))
                d_shift[n] += dphi * (-1.0 / tau[n])
    return d_tau_arr, d_shift_arr, d_r_arr
