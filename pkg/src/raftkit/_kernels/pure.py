"""Numpy fallback for the scoring kernels.

Arithmetic mirrors the compiled kernel expression-for-expression so both
backends produce bit-identical scores.
"""

import numpy as np


def masked_df(doc_idx: np.ndarray, mask: np.ndarray) -> int:
    """Number of postings whose document is authorized."""
    return int(mask[doc_idx].sum())


def bm25_accumulate(
    doc_idx: np.ndarray,
    tf: np.ndarray,
    idf: float,
    k1: float,
    b: float,
    doc_len: np.ndarray,
    avgdl: float,
    mask: np.ndarray,
    scores: np.ndarray,
) -> None:
    """Add one term's Okapi contribution to the authorized documents' scores.

    scores[d] += idf * tf*(k1+1) / (tf + k1*(1 - b + b*(len(d)/avgdl)))
    """
    sel = mask[doc_idx]
    if not sel.any():
        return
    docs = doc_idx[sel]
    tfs = tf[sel]
    dl = doc_len[docs]
    contrib = idf * (tfs * (k1 + 1.0)) / (tfs + k1 * (1.0 - b + b * (dl / avgdl)))
    # one posting per (term, doc), so plain fancy-index add is safe
    scores[docs] += contrib
