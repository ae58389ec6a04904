# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: masked softmax, region masks, gated argmax."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint8_t, uint64_t, int64_t

cnp.import_array()


def masked_softmax(const double[:, ::1] scores, const uint8_t[:, ::1] allowed=None):
    cdef Py_ssize_t n = scores.shape[0], m = scores.shape[1]
    cdef Py_ssize_t i, j
    cdef double row_max, total, v
    cdef bint found
    cdef bint masked = allowed is not None
    if masked and (allowed.shape[0] != n or allowed.shape[1] != m):
        raise ValueError("mask shape does not match scores")
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        found = False
        row_max = 0.0
        for j in range(m):
            if masked and not allowed[i, j]:
                continue
            v = scores[i, j]
            if not found or v > row_max:
                row_max = v
                found = True
        if not found:
            raise ValueError(f"row {i} has no allowed entries")
        total = 0.0
        for j in range(m):
            if masked and not allowed[i, j]:
                continue
            v = exp(scores[i, j] - row_max)
            o[i, j] = v
            total += v
        for j in range(m):
            o[i, j] = o[i, j] / total
    return out


def region_mask(const uint64_t[::1] membership, const double[:, ::1] draws=None,
                double threshold=1.0):
    cdef Py_ssize_t n = membership.shape[0]
    cdef Py_ssize_t i, j
    cdef bint use_draws = draws is not None
    cdef uint64_t mi
    if use_draws and (draws.shape[0] != n or draws.shape[1] != n):
        raise ValueError("draws shape does not match membership")
    out = np.zeros((n, n), dtype=np.uint8)
    cdef uint8_t[:, ::1] o = out
    for i in range(n):
        mi = membership[i]
        for j in range(n):
            if i == j or (mi & membership[j]) != 0:
                o[i, j] = 1
            elif use_draws and draws[i, j] > threshold:
                o[i, j] = 1
    return out


def gated_argmax(const double[:, ::1] weights, Py_ssize_t frames, Py_ssize_t tokens):
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t r, c, src_frame
    cdef double best, v
    cdef int64_t best_idx
    if weights.shape[1] != n or frames * tokens != n:
        raise ValueError("weights must be (frames*tokens) square")
    targets = np.full(n, -1, dtype=np.int64)
    scores = np.zeros(n, dtype=np.float64)
    cdef int64_t[::1] t = targets
    cdef double[::1] s = scores
    for r in range(n):
        src_frame = r // tokens
        best = 0.0
        best_idx = -1
        for c in range(n):
            if c // tokens == src_frame:
                continue
            v = weights[r, c]
            if v > best:
                best = v
                best_idx = c
        t[r] = best_idx
        s[r] = best
    return targets, scores
