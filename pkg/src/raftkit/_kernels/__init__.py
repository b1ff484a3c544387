"""Kernel selection: compiled Cython extension when importable, numpy otherwise.

Set RAFTKIT_PURE_KERNELS=1 to force the fallback (used by tests and the
benchmark). Masks are passed as numpy bool arrays; the compiled kernel views
them as uint8 over the same buffer.
"""

import os

import numpy as np

from raftkit._kernels import pure as _pure

_compiled = None
if os.environ.get("RAFTKIT_PURE_KERNELS") != "1":
    try:
        from raftkit._kernels import _scorekern as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "pure"

if _compiled is not None:

    def masked_df(doc_idx: np.ndarray, mask: np.ndarray) -> int:
        return _compiled.masked_df(doc_idx, mask.view(np.uint8))

    def bm25_accumulate(doc_idx, tf, idf, k1, b, doc_len, avgdl, mask, scores) -> None:
        _compiled.bm25_accumulate(
            doc_idx, tf, idf, k1, b, doc_len, avgdl, mask.view(np.uint8), scores
        )

else:
    masked_df = _pure.masked_df
    bm25_accumulate = _pure.bm25_accumulate
