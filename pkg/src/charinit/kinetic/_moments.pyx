# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled angular-momentum sums for the Vlasov source integrals."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def angular_sums(const double[:, :, ::1] metric, const double[::1] spatial,
                 const double[:, ::1] p, const double[::1] w, double m2):
    """Per-node sums over the angular momentum quadrature.

    For each node ``i`` with ``spatial[i] != 0`` and each quadrature point
    ``q`` with ``e = m2 + T_ab p^a p^b`` and ``v_a = T_ab p^b``:
    ``A0 += w e^2``, ``A1_a += w e v_a``, ``A2 += w e``, ``A3_ab += w v_a v_b``.
    """
    cdef Py_ssize_t N = metric.shape[0], k = metric.shape[1], Q = p.shape[0]
    cdef Py_ssize_t i, q, a, b
    cdef double e, wq, s0, s2
    A0_arr = np.zeros(N)
    A1_arr = np.zeros((N, k))
    A2_arr = np.zeros(N)
    A3_arr = np.zeros((N, k, k))
    cdef double[::1] A0 = A0_arr, A2 = A2_arr
    cdef double[:, ::1] A1 = A1_arr
    cdef double[:, :, ::1] A3 = A3_arr
    cdef double v[16]
    cdef double s1[16]
    cdef double s3[256]
    if k > 16:
        raise ValueError("angular dimension above 16 not supported by the compiled kernel")
    for i in range(N):
        if spatial[i] == 0.0:
            continue
        s0 = 0.0
        s2 = 0.0
        for a in range(k):
            s1[a] = 0.0
            for b in range(k):
                s3[a * k + b] = 0.0
        for q in range(Q):
            e = m2
            for a in range(k):
                v[a] = 0.0
                for b in range(k):
                    v[a] += metric[i, a, b] * p[q, b]
                e += v[a] * p[q, a]
            wq = w[q]
            s0 += wq * e * e
            s2 += wq * e
            for a in range(k):
                s1[a] += wq * e * v[a]
                for b in range(a, k):
                    s3[a * k + b] += wq * v[a] * v[b]
        A0[i] = s0
        A2[i] = s2
        for a in range(k):
            A1[i, a] = s1[a]
            for b in range(a, k):
                A3[i, a, b] = s3[a * k + b]
                A3[i, b, a] = s3[a * k + b]
    return A0_arr, A1_arr, A2_arr, A3_arr
