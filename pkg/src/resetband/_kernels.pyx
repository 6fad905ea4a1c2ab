# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-sample loops for the hybrid simulator.

Mirrors ``_kernels_py`` statement for statement.  The loops run without the
GIL so independent simulations can share a thread pool.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

BACKEND = "cython"


cdef inline bint _crossed(double prev, double cur) noexcept nogil:
    return cur * prev < 0.0 or (cur == 0.0 and prev != 0.0)


def open_loop(double[:, ::1] Phi, double[::1] G0, double[::1] G1, double[::1] C,
              double D, double[::1] rho, double[::1] u, double[::1] trig):
    cdef Py_ssize_t n = Phi.shape[0]
    cdef Py_ssize_t N = trig.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double acc
    x_arr = np.zeros(n)
    xn_arr = np.zeros(n)
    y_arr = np.empty(N)
    yl_arr = np.empty(N)
    f_arr = np.zeros(N, dtype=np.int8)
    cdef double[::1] x = x_arr
    cdef double[::1] xn = xn_arr
    cdef double[::1] y = y_arr
    cdef double[::1] yl = yl_arr
    cdef signed char[::1] flags = f_arr
    with nogil:
        for k in range(N):
            acc = 0.0
            for i in range(n):
                acc = acc + C[i] * x[i]
            yl[k] = acc + D * u[k]
            if k > 0 and _crossed(trig[k - 1], trig[k]):
                for i in range(n):
                    x[i] = x[i] * rho[i]
                flags[k] = 1
            acc = 0.0
            for i in range(n):
                acc = acc + C[i] * x[i]
            y[k] = acc + D * u[k]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc = acc + Phi[i, j] * x[j]
                xn[i] = acc + G0[i] * u[k] + G1[i] * u[k + 1]
            for i in range(n):
                x[i] = xn[i]
    return y_arr, yl_arr, f_arr


def closed_loop(double[:, ::1] Ac, double[::1] Bc, double[::1] Cc, double Dc,
                double[::1] rho, double[:, ::1] Ap, double[::1] Bp, double[::1] Cp,
                double[::1] r, double limit):
    cdef Py_ssize_t nc = Ac.shape[0]
    cdef Py_ssize_t npl = Ap.shape[0]
    cdef Py_ssize_t N = r.shape[0]
    cdef Py_ssize_t k, i, j
    cdef Py_ssize_t stop = -1
    cdef double acc, yk, ek, uk
    cdef double e_prev = 0.0
    xc_arr = np.zeros(nc)
    xcn_arr = np.zeros(nc)
    xp_arr = np.zeros(npl)
    xpn_arr = np.zeros(npl)
    e_arr = np.zeros(N)
    u_arr = np.zeros(N)
    y_arr = np.zeros(N)
    f_arr = np.zeros(N, dtype=np.int8)
    cdef double[::1] xc = xc_arr
    cdef double[::1] xcn = xcn_arr
    cdef double[::1] xp = xp_arr
    cdef double[::1] xpn = xpn_arr
    cdef double[::1] e = e_arr
    cdef double[::1] u = u_arr
    cdef double[::1] y = y_arr
    cdef signed char[::1] flags = f_arr
    with nogil:
        for k in range(N):
            acc = 0.0
            for i in range(npl):
                acc = acc + Cp[i] * xp[i]
            yk = acc
            ek = r[k] - yk
            if k > 0 and _crossed(e_prev, ek):
                for i in range(nc):
                    xc[i] = xc[i] * rho[i]
                flags[k] = 1
            acc = 0.0
            for i in range(nc):
                acc = acc + Cc[i] * xc[i]
            uk = acc + Dc * ek
            e[k] = ek
            u[k] = uk
            y[k] = yk
            if fabs(yk) > limit:
                stop = k
                break
            for i in range(nc):
                acc = 0.0
                for j in range(nc):
                    acc = acc + Ac[i, j] * xc[j]
                xcn[i] = acc + Bc[i] * ek
            for i in range(npl):
                acc = 0.0
                for j in range(npl):
                    acc = acc + Ap[i, j] * xp[j]
                xpn[i] = acc + Bp[i] * uk
            for i in range(nc):
                xc[i] = xcn[i]
            for i in range(npl):
                xp[i] = xpn[i]
            e_prev = ek
    return e_arr, u_arr, y_arr, f_arr, stop
