# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step kernels: small-vector MLP forward passes and packet decode.

Same contracts as _kernels_numpy; the two are interchangeable up to
floating-point rounding (different tanh/exp code paths).
"""

from libc.math cimport exp, tanh

import numpy as np


def actor_probs(double[::1] x, double[:, ::1] w1, double[::1] b1,
                double[:, ::1] w2, double[::1] b2,
                double[:, ::1] w3, double[::1] b3):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t h = b1.shape[0]
    cdef Py_ssize_t a = b3.shape[0]
    cdef double[::1] h1 = np.empty(h)
    cdef double[::1] h2 = np.empty(h)
    out_arr = np.empty(a)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double s
    for j in range(h):
        s = b1[j]
        for i in range(d):
            s += x[i] * w1[i, j]
        h1[j] = tanh(s)
    for j in range(h):
        s = b2[j]
        for i in range(h):
            s += h1[i] * w2[i, j]
        h2[j] = tanh(s)
    for j in range(a):
        s = b3[j]
        for i in range(h):
            s += h2[i] * w3[i, j]
        out[j] = 0.5 * (1.0 + tanh(0.5 * s))
    return out_arr


def critic_value(double[::1] x, double[:, ::1] w1, double[::1] b1,
                 double[:, ::1] w2, double[::1] b2,
                 double[:, ::1] w3, double[::1] b3):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t h = b1.shape[0]
    cdef double[::1] h1 = np.empty(h)
    cdef Py_ssize_t i, j
    cdef double s, v
    for j in range(h):
        s = b1[j]
        for i in range(d):
            s += x[i] * w1[i, j]
        h1[j] = tanh(s)
    v = b3[0]
    cdef double t
    for j in range(h):
        s = b2[j]
        for i in range(h):
            s += h1[i] * w2[i, j]
        t = tanh(s)
        v += t * w3[j, 0]
    return v


def decode_deliveries(unsigned char[::1] packet,
                      unsigned char[:, ::1] knowledge,
                      unsigned char[:, ::1] requests):
    cdef Py_ssize_t nf = knowledge.shape[0]
    cdef Py_ssize_t k = knowledge.shape[1]
    out_arr = np.empty(k, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i, b, count
    cdef Py_ssize_t found
    for i in range(k):
        count = 0
        found = -1
        for b in range(nf):
            if packet[b] and not knowledge[b, i]:
                count += 1
                if count > 1:
                    break
                found = b
        if count == 1 and requests[found, i]:
            out[i] = found
        else:
            out[i] = -1
    return out_arr
