"""Access-filtered hybrid retrieval over chunks.

Two rankers run per query: Okapi BM25 over an inverted index and exact
cosine search over unit embeddings. Their rankings are combined with
Reciprocal Rank Fusion. The access filter is applied before ranking in both
rankers, and the per-query BM25 corpus statistics (N, avgdl, df) are computed
over the authorized subset only, so results are identical to searching a
physically filtered sub-corpus: forbidden documents leak no rank information.

Scoring contract (used verbatim by the test oracles):

    IDF(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(d) = sum over query tokens of
               IDF(t) * tf*(k1+1) / (tf + k1*(1 - b + b*(|d|/avgdl)))

Only chunks matching at least one query term are returned by the lexical
ranker (their scores are strictly positive). Ties everywhere break by
chunk_id ascending.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from raftkit import _kernels
from raftkit.corpus import Chunk
from raftkit.gateway import GatewayError
from raftkit.text import tokenize

LEXICAL_MAGIC = b"RKLX"
VECTOR_MAGIC = b"RKVX"
INDEX_VERSION = 1

EmbedFn = Callable[[Sequence[str]], Sequence[np.ndarray]]


@dataclass(frozen=True)
class RetrievalConfig:
    top_n: int = 10
    rrf_k: float = 60.0
    candidate_depth: int = 100
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self) -> None:
        if self.top_n > self.candidate_depth:
            raise ValueError("top_n must be <= candidate_depth")
        if self.rrf_k <= 0 or self.bm25_k1 <= 0:
            raise ValueError("rrf_k and bm25_k1 must be positive")
        if not 0.0 <= self.bm25_b <= 1.0:
            raise ValueError("bm25_b must lie in [0, 1]")


@dataclass(frozen=True)
class AccessFilter:
    """A chunk is authorized iff its group set is empty (public) or shares a
    group with the user."""

    user_groups: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "user_groups", frozenset(self.user_groups))

    def authorizes(self, chunk_groups: frozenset[str]) -> bool:
        return not chunk_groups or not chunk_groups.isdisjoint(self.user_groups)

    @classmethod
    def public(cls) -> "AccessFilter":
        return cls(frozenset())


@dataclass(frozen=True)
class FusedHit:
    chunk_id: str
    fused_score: float
    lex_rank: int | None = None
    sem_rank: int | None = None


@dataclass(frozen=True)
class RetrievalResult:
    hits: tuple[FusedHit, ...] = ()
    degraded: bool = False

    def __iter__(self) -> Iterator[FusedHit]:
        return iter(self.hits)

    def __len__(self) -> int:
        return len(self.hits)

    @property
    def chunk_ids(self) -> list[str]:
        return [h.chunk_id for h in self.hits]


def rrf_fuse(
    rankings: Sequence[Sequence[str]], k: float, top_n: int
) -> RetrievalResult:
    """Reciprocal Rank Fusion: fused(id) = sum of 1/(k + rank) over the
    rankings containing id, ranks 1-based. Sorted by fused score descending,
    ties by id ascending. The first two rankings populate lex_rank/sem_rank.
    """
    scores: dict[str, float] = {}
    ranks: dict[str, list[int | None]] = {}
    n_rankings = len(rankings)
    for li, ranking in enumerate(rankings):
        seen: set[str] = set()
        for rank, cid in enumerate(ranking, 1):
            if cid in seen:
                raise ValueError(f"duplicate id in ranking {li}: {cid!r}")
            seen.add(cid)
            if cid not in scores:
                scores[cid] = 0.0
                ranks[cid] = [None] * n_rankings
            scores[cid] += 1.0 / (k + rank)
            ranks[cid][li] = rank
    order = sorted(scores, key=lambda cid: (-scores[cid], cid))
    hits = tuple(
        FusedHit(
            chunk_id=cid,
            fused_score=scores[cid],
            lex_rank=ranks[cid][0] if n_rankings > 0 else None,
            sem_rank=ranks[cid][1] if n_rankings > 1 else None,
        )
        for cid in order[:top_n]
    )
    return RetrievalResult(hits=hits)


class RetrievalEngine:
    """Immutable index snapshot over a fixed chunk set.

    Build is exclusive; searches are read-only and safe to run concurrently.
    Swapping in a freshly built/loaded engine object is atomic for searchers.
    """

    def __init__(
        self,
        chunks: list[Chunk],
        vectors: np.ndarray,
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        doc_len: np.ndarray,
        embed_fn: EmbedFn | None = None,
    ):
        self._chunks = chunks
        self._ids = [c.chunk_id for c in chunks]
        self._by_id = {c.chunk_id: c for c in chunks}
        self._vectors = vectors
        self._postings = postings
        self._doc_len = doc_len
        self._embed = embed_fn
        self._dim = int(vectors.shape[1]) if vectors.size else None
        # group-set interning so per-query masks cost one check per distinct set
        gset_index: dict[frozenset[str], int] = {}
        gset_ids = np.empty(len(chunks), dtype=np.int32)
        for i, c in enumerate(chunks):
            idx = gset_index.setdefault(c.access_groups, len(gset_index))
            gset_ids[i] = idx
        self._gsets = list(gset_index)
        self._gset_ids = gset_ids

    # -- construction --------------------------------------------------------

    @classmethod
    def build(
        cls, chunks: Sequence[Chunk], embed_fn: EmbedFn, batch_size: int = 64
    ) -> "RetrievalEngine":
        ordered = sorted(chunks, key=lambda c: c.chunk_id)
        if len({c.chunk_id for c in ordered}) != len(ordered):
            raise ValueError("duplicate chunk_ids in corpus")
        token_lists = [tokenize(c.text) for c in ordered]
        doc_len = np.array([len(t) for t in token_lists], dtype=np.float64)
        raw: dict[str, list[tuple[int, int]]] = {}
        for i, tokens in enumerate(token_lists):
            for term, tf in Counter(tokens).items():
                raw.setdefault(term, []).append((i, tf))
        postings = {
            term: (
                np.array([i for i, _ in plist], dtype=np.int32),
                np.array([tf for _, tf in plist], dtype=np.float64),
            )
            for term, plist in raw.items()
        }
        if ordered:
            vecs: list[np.ndarray] = []
            texts = [c.text for c in ordered]
            for lo in range(0, len(texts), batch_size):
                vecs.extend(embed_fn(texts[lo : lo + batch_size]))
            vectors = np.array(vecs, dtype=np.float64)
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("indexed vectors must be unit-normalized")
        else:
            vectors = np.zeros((0, 0), dtype=np.float64)
        return cls(list(ordered), vectors, postings, doc_len, embed_fn)

    # -- lookups ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._chunks)

    def chunk(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    @property
    def chunks(self) -> list[Chunk]:
        return list(self._chunks)

    def all_groups(self) -> frozenset[str]:
        out: set[str] = set()
        for gs in self._gsets:
            out |= gs
        return frozenset(out)

    def _mask(self, filt: AccessFilter) -> np.ndarray:
        if not self._chunks:
            return np.zeros(0, dtype=bool)
        per_set = np.array([filt.authorizes(gs) for gs in self._gsets], dtype=bool)
        return per_set[self._gset_ids]

    # -- rankers -----------------------------------------------------------------

    def bm25_search(
        self,
        query: str,
        filt: AccessFilter,
        depth: int,
        k1: float = 1.2,
        b: float = 0.75,
    ) -> list[tuple[str, float]]:
        tokens = tokenize(query)
        if not tokens or depth <= 0 or not self._chunks:
            return []
        mask = self._mask(filt)
        n_auth = int(mask.sum())
        if n_auth == 0:
            return []
        avgdl = float(self._doc_len[mask].sum()) / n_auth
        scores = np.zeros(len(self._chunks), dtype=np.float64)
        for term in tokens:
            posting = self._postings.get(term)
            if posting is None:
                continue
            doc_idx, tf = posting
            df = _kernels.masked_df(doc_idx, mask)
            if df == 0:
                continue
            idf = math.log(1.0 + (n_auth - df + 0.5) / (df + 0.5))
            _kernels.bm25_accumulate(
                doc_idx, tf, idf, k1, b, self._doc_len, avgdl, mask, scores
            )
        matched = np.nonzero(scores > 0.0)[0]
        if matched.size == 0:
            return []
        order = matched[np.argsort(-scores[matched], kind="stable")][:depth]
        return [(self._ids[i], float(scores[i])) for i in order]

    def vector_search(
        self, query_vec: np.ndarray, filt: AccessFilter, depth: int
    ) -> list[tuple[str, float]]:
        if depth <= 0 or not self._chunks:
            return []
        qvec = np.asarray(query_vec, dtype=np.float64)
        if qvec.ndim != 1 or qvec.shape[0] != self._dim:
            raise ValueError(
                f"dimension mismatch: query {qvec.shape} vs index dim {self._dim}"
            )
        mask = self._mask(filt)
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return []
        # row-wise reduction instead of a BLAS matvec: each row's result then
        # depends only on that row, so scores are identical no matter which
        # other rows sit in the index (the physically-filtered-corpus law)
        cos = (self._vectors * qvec).sum(axis=1)
        order = idx[np.argsort(-cos[idx], kind="stable")][:depth]
        return [(self._ids[i], float(cos[i])) for i in order]

    def hybrid_search(
        self, query: str, filt: AccessFilter, cfg: RetrievalConfig
    ) -> RetrievalResult:
        """RRF fusion of the lexical and semantic rankings, both filtered.

        If the embedding service fails the result degrades to lexical-only
        and is flagged; every returned chunk satisfies the filter.
        """
        lex = self.bm25_search(
            query, filt, cfg.candidate_depth, cfg.bm25_k1, cfg.bm25_b
        )
        sem: list[tuple[str, float]] = []
        degraded = False
        if self._embed is None:
            degraded = True
        else:
            try:
                qvec = self._embed([query])[0]
                sem = self.vector_search(qvec, filt, cfg.candidate_depth)
            except GatewayError:
                degraded = True
        fused = rrf_fuse(
            [[cid for cid, _ in lex], [cid for cid, _ in sem]], cfg.rrf_k, cfg.top_n
        )
        return replace(fused, degraded=degraded)

    # -- persistence ------------------------------------------------------------

    def save(self, index_dir: str | Path) -> None:
        index_dir = Path(index_dir)
        index_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "chunks": [c.to_record() for c in self._chunks],
            "doc_len": [int(x) for x in self._doc_len],
            "postings": {
                term: [idx.tolist(), [int(t) for t in tf]]
                for term, (idx, tf) in sorted(self._postings.items())
            },
        }
        blob = zlib.compress(json.dumps(payload, ensure_ascii=False).encode("utf-8"))
        (index_dir / "lexical.idx").write_bytes(
            LEXICAL_MAGIC + bytes([INDEX_VERSION]) + blob
        )
        n, dim = self._vectors.shape if self._vectors.size else (0, 0)
        (index_dir / "vectors.idx").write_bytes(
            VECTOR_MAGIC
            + bytes([INDEX_VERSION])
            + struct.pack("<II", n, dim)
            + self._vectors.astype("<f8").tobytes()
        )

    @classmethod
    def load(
        cls, index_dir: str | Path, embed_fn: EmbedFn | None = None
    ) -> "RetrievalEngine":
        index_dir = Path(index_dir)
        lex_raw = (index_dir / "lexical.idx").read_bytes()
        _check_header(lex_raw, LEXICAL_MAGIC, "lexical index")
        payload = json.loads(zlib.decompress(lex_raw[5:]).decode("utf-8"))
        chunks = [Chunk.from_record(r) for r in payload["chunks"]]
        doc_len = np.array(payload["doc_len"], dtype=np.float64)
        postings = {
            term: (
                np.array(pair[0], dtype=np.int32),
                np.array(pair[1], dtype=np.float64),
            )
            for term, pair in payload["postings"].items()
        }
        vec_raw = (index_dir / "vectors.idx").read_bytes()
        _check_header(vec_raw, VECTOR_MAGIC, "vector index")
        n, dim = struct.unpack("<II", vec_raw[5:13])
        vectors = np.frombuffer(vec_raw[13:], dtype="<f8").reshape(n, dim).copy()
        return cls(chunks, vectors, postings, doc_len, embed_fn)


def _check_header(raw: bytes, magic: bytes, what: str) -> None:
    if raw[:4] != magic:
        raise ValueError(f"not a raftkit {what} (bad magic header)")
    if raw[4] != INDEX_VERSION:
        raise ValueError(f"unsupported {what} version: {raw[4]}")


def bm25_scores(
    texts: Sequence[str], query: str, k1: float = 1.2, b: float = 0.75
) -> list[float]:
    """Okapi BM25 of each text against the query, for small ad-hoc indexes
    (few-shot example selection ranks history entries with this)."""
    if not texts:
        return []
    query_tokens = tokenize(query)
    doc_tokens = [tokenize(t) for t in texts]
    doc_len = [len(t) for t in doc_tokens]
    total = sum(doc_len)
    if total == 0 or not query_tokens:
        return [0.0] * len(texts)
    n = len(texts)
    avgdl = total / n
    counters = [Counter(t) for t in doc_tokens]
    df = Counter()
    for counter in counters:
        df.update(counter.keys())
    scores = [0.0] * n
    for term in query_tokens:
        term_df = df.get(term, 0)
        if term_df == 0:
            continue
        idf = math.log(1.0 + (n - term_df + 0.5) / (term_df + 0.5))
        for i, counter in enumerate(counters):
            tf = counter.get(term, 0)
            if tf == 0:
                continue
            scores[i] += (
                idf
                * (tf * (k1 + 1.0))
                / (tf + k1 * (1.0 - b + b * (doc_len[i] / avgdl)))
            )
    return scores
