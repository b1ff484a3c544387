# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled BM25 scoring kernel. Must stay arithmetically identical to pure.py."""

import numpy as np

cimport numpy as cnp


def masked_df(cnp.int32_t[::1] doc_idx, cnp.uint8_t[::1] mask):
    cdef Py_ssize_t i, n = doc_idx.shape[0]
    cdef long count = 0
    for i in range(n):
        if mask[doc_idx[i]]:
            count += 1
    return count


def bm25_accumulate(
    cnp.int32_t[::1] doc_idx,
    cnp.float64_t[::1] tf,
    double idf,
    double k1,
    double b,
    cnp.float64_t[::1] doc_len,
    double avgdl,
    cnp.uint8_t[::1] mask,
    cnp.float64_t[::1] scores,
):
    cdef Py_ssize_t i, n = doc_idx.shape[0]
    cdef int d
    cdef double t, dl
    for i in range(n):
        d = doc_idx[i]
        if not mask[d]:
            continue
        t = tf[i]
        dl = doc_len[d]
        scores[d] += idf * (t * (k1 + 1.0)) / (t + k1 * (1.0 - b + b * (dl / avgdl)))
