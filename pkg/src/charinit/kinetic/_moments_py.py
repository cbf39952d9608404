"""Numpy fallback for the compiled angular-momentum sums."""

import numpy as np

CHUNK = 4096


def angular_sums(metric, spatial, p, w, m2):
    N, k = metric.shape[:2]
    A0 = np.zeros(N)
    A1 = np.zeros((N, k))
    A2 = np.zeros(N)
    A3 = np.zeros((N, k, k))
    live = np.flatnonzero(spatial != 0.0)
    for start in range(0, live.size, CHUNK):
        idx = live[start:start + CHUNK]
        v = np.einsum("iab,qb->iqa", metric[idx], p)
        e = m2 + np.einsum("iqa,qa->iq", v, p)
        we = w * e
        A0[idx] = np.einsum("iq,iq->i", we, e)
        A1[idx] = np.einsum("iq,iqa->ia", we, v)
        A2[idx] = we.sum(axis=1)
        A3[idx] = np.einsum("q,iqa,iqb->iab", w, v, v)
    return A0, A1, A2, A3
