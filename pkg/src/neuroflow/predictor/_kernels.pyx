# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-sample forward pass of the token mixer.

Mirrors ``_fallback.forward_one`` operation for operation; the scheduler
calls it once per DNN dispatch.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()


def forward_one(tuple packed, const double[::1] xm, const double[:, ::1] xp):
    cdef const double[:, ::1] Wm = packed[0]
    cdef const double[::1] bm = packed[1]
    cdef const double[:, ::1] Wp = packed[2]
    cdef const double[::1] bp = packed[3]
    cdef const double[:, ::1] E = packed[4]
    cdef const double[:, ::1] Wq = packed[5]
    cdef const double[:, ::1] Wk = packed[6]
    cdef const double[:, ::1] Wv = packed[7]
    cdef const double[:, ::1] W1 = packed[8]
    cdef const double[::1] b1 = packed[9]
    cdef const double[:, ::1] W2 = packed[10]
    cdef const double[::1] b2 = packed[11]
    cdef const double[::1] wr = packed[12]
    cdef double br = packed[13]
    cdef const double[::1] wc = packed[14]
    cdef double bc = packed[15]
    cdef Py_ssize_t d = packed[16]
    cdef Py_ssize_t h = packed[17]
    cdef Py_ssize_t P = xp.shape[0]
    cdef Py_ssize_t nm = xm.shape[0]
    cdef Py_ssize_t npf = xp.shape[1]
    cdef Py_ssize_t i, j, k, p
    cdef double acc, smax, ssum, scale = 1.0 / sqrt(<double>d)

    m_arr = np.empty(d)
    H_arr = np.empty((P, d))
    q_arr = np.empty(d)
    kv_arr = np.empty((2, P, d))
    s_arr = np.empty(P)
    r_arr = np.empty(d)
    g1_arr = np.empty(h)
    g2_arr = np.empty(h)
    z_arr = np.empty(P)
    l_arr = np.empty(P)
    cdef double[::1] m = m_arr
    cdef double[:, ::1] H = H_arr
    cdef double[::1] q = q_arr
    cdef double[:, :, ::1] KV = kv_arr
    cdef double[::1] s = s_arr
    cdef double[::1] r = r_arr
    cdef double[::1] g1 = g1_arr
    cdef double[::1] g2 = g2_arr
    cdef double[::1] z = z_arr
    cdef double[::1] lg = l_arr

    for j in range(d):
        acc = bm[j]
        for i in range(nm):
            acc += xm[i] * Wm[i, j]
        m[j] = tanh(acc)
    for p in range(P):
        for j in range(d):
            acc = bp[j] + E[p, j]
            for i in range(npf):
                acc += xp[p, i] * Wp[i, j]
            H[p, j] = tanh(acc)
    for j in range(d):
        acc = 0.0
        for i in range(d):
            acc += m[i] * Wq[i, j]
        q[j] = acc
    for p in range(P):
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc += H[p, i] * Wk[i, j]
            KV[0, p, j] = acc
            acc = 0.0
            for i in range(d):
                acc += H[p, i] * Wv[i, j]
            KV[1, p, j] = acc
    smax = -1e300
    for p in range(P):
        acc = 0.0
        for j in range(d):
            acc += q[j] * KV[0, p, j]
        s[p] = acc * scale
        if s[p] > smax:
            smax = s[p]
    ssum = 0.0
    for p in range(P):
        s[p] = exp(s[p] - smax)
        ssum += s[p]
    for p in range(P):
        s[p] /= ssum
    for j in range(d):
        acc = m[j]
        for p in range(P):
            acc += s[p] * KV[1, p, j]
        r[j] = acc
    for p in range(P):
        for k in range(h):
            acc = b1[k]
            for i in range(d):
                acc += r[i] * W1[i, k]
            for i in range(d):
                acc += H[p, i] * W1[d + i, k]
            g1[k] = tanh(acc)
        for k in range(h):
            acc = b2[k]
            for i in range(h):
                acc += g1[i] * W2[i, k]
            g2[k] = tanh(acc)
        acc = br
        for k in range(h):
            acc += g2[k] * wr[k]
        z[p] = acc
        acc = bc
        for k in range(h):
            acc += g2[k] * wc[k]
        lg[p] = acc
    return z_arr, l_arr, s_arr
