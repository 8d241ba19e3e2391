# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics are defined by ``afkit._pycore``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint64_t, int64_t, int32_t

cnp.import_array()

cdef uint8_t CODE[256]


cdef void _init_codes():
    cdef int i
    for i in range(256):
        CODE[i] = 4
    CODE[65] = 0
    CODE[67] = 1
    CODE[71] = 2
    CODE[84] = 3
    CODE[97] = 0
    CODE[99] = 1
    CODE[103] = 2
    CODE[116] = 3


_init_codes()


def kmer_codes(const uint8_t[::1] seq, int k, Py_ssize_t skip=0):
    if k < 1 or k > 32:
        raise ValueError("k must be in [1, 32]")
    cdef Py_ssize_t n = seq.shape[0]
    cdef Py_ssize_t nwin = n - k + 1
    if nwin <= skip:
        return np.empty(0, dtype=np.uint64), 0
    out = np.empty(nwin - skip, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t code = 0
    cdef uint64_t mask
    if k == 32:
        mask = ~(<uint64_t>0)
    else:
        mask = ((<uint64_t>1) << (2 * k)) - 1
    cdef Py_ssize_t i, start, m = 0, invalid = 0, last_bad = -1
    cdef uint8_t c
    with nogil:
        for i in range(n):
            c = CODE[seq[i]]
            if c > 3:
                last_bad = i
                c = 0
            code = ((code << 2) | c) & mask
            start = i - k + 1
            if start >= skip:
                if last_bad >= start:
                    invalid += 1
                else:
                    o[m] = code
                    m += 1
    return out[:m], invalid


def spaced_words(const uint8_t[::1] seq, const int64_t[::1] match_idx,
                 const int64_t[::1] dc_idx, Py_ssize_t length, Py_ssize_t skip=0):
    cdef Py_ssize_t n = seq.shape[0]
    cdef Py_ssize_t nwin = n - length + 1
    cdef Py_ssize_t w = match_idx.shape[0]
    cdef Py_ssize_t ndc = dc_idx.shape[0]
    if nwin <= skip:
        return np.empty(0, dtype=np.uint64), np.empty((0, ndc), dtype=np.uint8)
    keys = np.empty(nwin - skip, dtype=np.uint64)
    dcs = np.empty((nwin - skip, ndc), dtype=np.uint8)
    cdef uint64_t[::1] K = keys
    cdef uint8_t[:, ::1] Dc = dcs
    cdef Py_ssize_t s, j, m = 0
    cdef uint64_t key
    cdef uint8_t c
    cdef bint ok
    with nogil:
        for s in range(skip, nwin):
            key = 0
            ok = True
            for j in range(w):
                c = CODE[seq[s + match_idx[j]]]
                if c > 3:
                    ok = False
                    break
                key = (key << 2) | c
            if not ok:
                continue
            K[m] = key
            for j in range(ndc):
                Dc[m, j] = CODE[seq[s + dc_idx[j]]]
            m += 1
    return keys[:m], dcs[:m]


def fswm_accumulate(const int64_t[::1] group_starts, const uint8_t[::1] active,
                    const int32_t[::1] samples, const uint8_t[:, ::1] dcs,
                    int n, const int64_t[:, ::1] scores, int64_t threshold):
    kept = np.zeros((n, n), dtype=np.int64)
    mm = np.zeros((n, n), dtype=np.int64)
    seg_start_arr = np.empty(n + 1, dtype=np.int64)
    seg_owner_arr = np.empty(n, dtype=np.int32)
    cdef int64_t[:, ::1] Kp = kept
    cdef int64_t[:, ::1] Mm = mm
    cdef int64_t[::1] seg_start = seg_start_arr
    cdef int32_t[::1] seg_owner = seg_owner_arr
    cdef Py_ssize_t G = active.shape[0]
    cdef Py_ssize_t D = dcs.shape[1]
    cdef Py_ssize_t g, lo, hi, r, ns, a, b, x, y, d
    cdef int32_t si, sj
    cdef int64_t sc, mis
    cdef uint8_t ca, cb
    with nogil:
        for g in range(G):
            if not active[g]:
                continue
            lo = group_starts[g]
            hi = group_starts[g + 1]
            ns = 0
            r = lo
            while r < hi:
                seg_start[ns] = r
                seg_owner[ns] = samples[r]
                while r < hi and samples[r] == seg_owner[ns]:
                    r += 1
                ns += 1
            seg_start[ns] = hi
            for a in range(ns):
                si = seg_owner[a]
                for b in range(a + 1, ns):
                    sj = seg_owner[b]
                    for x in range(seg_start[a], seg_start[a + 1]):
                        for y in range(seg_start[b], seg_start[b + 1]):
                            sc = 0
                            mis = 0
                            for d in range(D):
                                ca = dcs[x, d]
                                cb = dcs[y, d]
                                sc += scores[ca, cb]
                                if ca != cb or ca > 3:
                                    mis += 1
                            if sc >= threshold:
                                Kp[si, sj] += 1
                                Mm[si, sj] += mis
    return kept, mm
