# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled blend kernel; semantics mirror ``_kernel_py.blend_kernel``."""

from libc.math cimport exp

import numpy as np

BACKEND = "cython"

cdef double ALPHA_CLAMP = 0.99
cdef double ALPHA_SKIP = 1.0 / 255.0
cdef double T_STOP = 1e-4


def blend_kernel(double[::1] mx, double[::1] my,
                 double[::1] inv_a, double[::1] inv_b, double[::1] inv_c,
                 double[::1] qcut, double[::1] opac, long long[::1] gidx,
                 long long[::1] x0, long long[::1] x1,
                 long long[::1] y0, long long[::1] y1,
                 double[:, ::1] payload, Py_ssize_t width, Py_ssize_t height,
                 double[:, :, ::1] data, double[:, ::1] alpha,
                 double[:, ::1] transm,
                 long long[::1] rec_pix, long long[::1] rec_g,
                 double[::1] rec_w):
    cdef Py_ssize_t s, x, y, c, k = 0
    cdef Py_ssize_t n_splats = mx.shape[0]
    cdef Py_ssize_t n_chan = payload.shape[1]
    cdef double dx, dy, q, a, w, t
    for s in range(n_splats):
        for y in range(y0[s], y1[s]):
            dy = y - my[s]
            for x in range(x0[s], x1[s]):
                t = transm[y, x]
                if t < T_STOP:
                    continue
                dx = x - mx[s]
                q = inv_a[s] * dx * dx + 2.0 * inv_b[s] * dx * dy + inv_c[s] * dy * dy
                if q > qcut[s]:
                    continue
                a = opac[s] * exp(-0.5 * q)
                if a > ALPHA_CLAMP:
                    a = ALPHA_CLAMP
                if a < ALPHA_SKIP:
                    continue
                w = a * t
                for c in range(n_chan):
                    data[y, x, c] += w * payload[s, c]
                alpha[y, x] += w
                transm[y, x] = t * (1.0 - a)
                rec_pix[k] = y * width + x
                rec_g[k] = gidx[s]
                rec_w[k] = w
                k += 1
    return k
