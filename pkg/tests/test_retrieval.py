import math
import random
from dataclasses import replace

import numpy as np
import pytest

from raftkit.gateway import GatewayError, hash_embedding
from raftkit.retrieval import (
    AccessFilter,
    RetrievalConfig,
    RetrievalEngine,
    bm25_scores,
    rrf_fuse,
)

from conftest import make_chunk, random_groups, random_text
from oracles import ref_authorized, ref_bm25_ranking, ref_hybrid, ref_rrf

DIM = 16


def embed_fn(texts):
    return [hash_embedding(t, DIM) for t in texts]


def build_engine(specs):
    """specs: list of (text, groups)"""
    chunks = [make_chunk(i, text, groups) for i, (text, groups) in enumerate(specs)]
    return RetrievalEngine.build(chunks, embed_fn), chunks


PUBLIC = AccessFilter.public()


# -- access filter --------------------------------------------------------------


def test_access_filter_rules():
    f = AccessFilter(frozenset({"a"}))
    assert f.authorizes(frozenset())  # public chunk
    assert f.authorizes(frozenset({"a", "b"}))
    assert not f.authorizes(frozenset({"b"}))
    assert PUBLIC.authorizes(frozenset())
    assert not PUBLIC.authorizes(frozenset({"a"}))


# -- BM25 ------------------------------------------------------------------------


def test_bm25_hand_case():
    # two docs, term in one: idf = ln(1 + 1.5/1.5) = ln 2
    # dl=4, avgdl=3, tf=1: contribution = ln2 * 2.2 / (1 + 1.2*(0.25 + 0.75*(4/3)))
    engine, _ = build_engine(
        [("slack margin check result", frozenset()), ("clock period", frozenset())]
    )
    hits = engine.bm25_search("slack", PUBLIC, depth=10)
    assert [cid for cid, _ in hits] == ["k00000"]
    expected = math.log(2.0) * (1.0 * 2.2) / (1.0 + 1.2 * (0.25 + 0.75 * (4.0 / 3.0)))
    assert hits[0][1] == expected
    assert abs(hits[0][1] - 0.6100) < 1e-4


def test_bm25_returns_only_matching_docs():
    engine, _ = build_engine([("alpha beta", frozenset()), ("gamma", frozenset())])
    assert engine.bm25_search("nothing matches here", PUBLIC, 10) == []
    assert engine.bm25_search("", PUBLIC, 10) == []
    hits = engine.bm25_search("alpha", PUBLIC, 10)
    assert [cid for cid, _ in hits] == ["k00000"]
    assert all(score > 0 for _, score in hits)


def test_bm25_duplicate_query_terms_count_twice():
    engine, _ = build_engine([("alpha beta", frozenset()), ("beta gamma", frozenset())])
    once = engine.bm25_search("alpha", PUBLIC, 10)[0][1]
    twice = engine.bm25_search("alpha alpha", PUBLIC, 10)[0][1]
    assert twice == once + once


def test_bm25_stats_use_only_the_authorized_subset():
    # same term everywhere; restricting the corpus changes N and avgdl
    specs = [
        ("slack slack margin", frozenset()),
        ("slack", frozenset({"g"})),
        ("slack report data words here", frozenset({"g"})),
    ]
    engine, chunks = build_engine(specs)
    public_hits = dict(engine.bm25_search("slack", PUBLIC, 10))
    insider_hits = dict(engine.bm25_search("slack", AccessFilter(frozenset({"g"})), 10))
    assert set(public_hits) == {"k00000"}
    assert set(insider_hits) == {"k00000", "k00001", "k00002"}
    assert public_hits["k00000"] != insider_hits["k00000"]


def test_depth_limits_results():
    engine, _ = build_engine([(f"slack word{i}", frozenset()) for i in range(8)])
    assert len(engine.bm25_search("slack", PUBLIC, 3)) == 3
    assert len(engine.bm25_search("slack", PUBLIC, 100)) == 8


# -- vector search ---------------------------------------------------------------


def test_vector_search_dimension_mismatch():
    engine, _ = build_engine([("text", frozenset())])
    with pytest.raises(ValueError, match="dimension"):
        engine.vector_search(np.zeros(DIM + 1), PUBLIC, 5)


def test_vector_search_returns_all_authorized():
    engine, _ = build_engine(
        [("a", frozenset()), ("b", frozenset({"g"})), ("c", frozenset())]
    )
    hits = engine.vector_search(hash_embedding("query", DIM), PUBLIC, 10)
    assert {cid for cid, _ in hits} == {"k00000", "k00002"}
    # cosine may be negative; results are not truncated at zero
    assert len(hits) == 2


def test_build_rejects_non_unit_vectors():
    chunks = [make_chunk(0, "text")]
    with pytest.raises(ValueError, match="unit"):
        RetrievalEngine.build(chunks, lambda texts: [np.ones(4) for _ in texts])


def test_build_rejects_duplicate_chunk_ids():
    chunks = [make_chunk(0, "a"), make_chunk(0, "b")]
    with pytest.raises(ValueError, match="duplicate"):
        RetrievalEngine.build(chunks, embed_fn)


# -- RRF ---------------------------------------------------------------------------


def test_rrf_double_rank_one():
    result = rrf_fuse([["a", "b"], ["a", "c"]], 60.0, 10)
    top = result.hits[0]
    assert top.chunk_id == "a"
    assert abs(top.fused_score - 2.0 / 61.0) < 1e-12
    assert top.fused_score == 1.0 / 61.0 + 1.0 / 61.0
    assert (top.lex_rank, top.sem_rank) == (1, 1)


def test_rrf_ranks_are_one_based_and_labeled():
    result = rrf_fuse([["a", "b"], ["b"]], 60.0, 10)
    by_id = {h.chunk_id: h for h in result.hits}
    assert by_id["a"].lex_rank == 1 and by_id["a"].sem_rank is None
    assert by_id["b"].lex_rank == 2 and by_id["b"].sem_rank == 1
    assert by_id["b"].fused_score == 1.0 / 62.0 + 1.0 / 61.0


def test_rrf_ties_break_by_id():
    result = rrf_fuse([["z"], ["a"]], 60.0, 10)
    assert result.chunk_ids == ["a", "z"]  # equal scores, id ascending


def test_rrf_rejects_duplicates_within_a_ranking():
    with pytest.raises(ValueError, match="duplicate"):
        rrf_fuse([["a", "a"]], 60.0, 10)


def test_rrf_top_n_and_empty():
    assert rrf_fuse([[], []], 60.0, 5).hits == ()
    result = rrf_fuse([["a", "b", "c"]], 60.0, 2)
    assert len(result) == 2


def test_rrf_matches_reference_sums():
    rankings = [["a", "b", "c"], ["c", "a"], ["b", "a", "d"]]
    fused = ref_rrf(rankings, 60.0)
    result = rrf_fuse(rankings, 60.0, 10)
    for hit in result:
        assert hit.fused_score == fused[hit.chunk_id]


# -- hybrid + filter-before-rank ---------------------------------------------------


def test_filtered_search_equals_physically_filtered_corpus():
    rng = random.Random(4821)
    pool = ["g1", "g2", "g3"]
    for trial in range(40):
        specs = [
            (random_text(rng), random_groups(rng, pool)) for _ in range(rng.randint(1, 30))
        ]
        user = frozenset(rng.sample(pool, rng.randint(0, 2)))
        filt = AccessFilter(user)
        engine, chunks = build_engine(specs)
        sub_chunks = [
            replace(c, access_groups=frozenset())
            for c in chunks
            if filt.authorizes(c.access_groups)
        ]
        sub_engine = RetrievalEngine.build(sub_chunks, embed_fn)
        query = random_text(rng, 1, 5)
        assert engine.bm25_search(query, filt, 50) == sub_engine.bm25_search(
            query, PUBLIC, 50
        )
        qvec = hash_embedding(query, DIM)
        if sub_chunks:
            assert engine.vector_search(qvec, filt, 50) == sub_engine.vector_search(
                qvec, PUBLIC, 50
            )
        cfg = RetrievalConfig(top_n=10, candidate_depth=50)
        a = engine.hybrid_search(query, filt, cfg)
        b = sub_engine.hybrid_search(query, PUBLIC, cfg)
        assert [(h.chunk_id, h.fused_score) for h in a.hits] == [
            (h.chunk_id, h.fused_score) for h in b.hits
        ]


def test_hybrid_matches_bruteforce_oracle():
    rng = random.Random(911)
    pool = ["g1", "g2", "g3", "g4"]
    cfg = RetrievalConfig(top_n=10, candidate_depth=40)
    for trial in range(60):
        n = rng.randint(1, 50)
        specs = [(random_text(rng), random_groups(rng, pool)) for _ in range(n)]
        engine, chunks = build_engine(specs)
        user = frozenset(rng.sample(pool, rng.randint(0, 3)))
        query = random_text(rng, 1, 6)
        got = engine.hybrid_search(query, AccessFilter(user), cfg)
        texts = [c.text for c in chunks]
        ids = [c.chunk_id for c in chunks]
        groups = [c.access_groups for c in chunks]
        vectors = np.array([hash_embedding(t, DIM) for t in texts])
        qvec = hash_embedding(query, DIM)
        want = ref_hybrid(
            texts, ids, groups, user, query, vectors, qvec,
            cfg.top_n, cfg.candidate_depth, cfg.rrf_k,
        )
        assert [(h.chunk_id, h.fused_score) for h in got.hits] == want
        assert not got.degraded


def test_bm25_search_matches_oracle_with_restricted_user():
    rng = random.Random(77)
    pool = ["a", "b"]
    for _ in range(30):
        specs = [
            (random_text(rng), random_groups(rng, pool)) for _ in range(rng.randint(1, 25))
        ]
        engine, chunks = build_engine(specs)
        user = frozenset(rng.sample(pool, rng.randint(0, 2)))
        query = random_text(rng, 1, 4)
        got = engine.bm25_search(query, AccessFilter(user), 30)
        want = ref_bm25_ranking(
            [c.text for c in chunks],
            [c.chunk_id for c in chunks],
            ref_authorized([c.access_groups for c in chunks], user),
            query,
            30,
        )
        assert got == want


def test_hybrid_degrades_without_embeddings():
    chunks = [make_chunk(0, "slack history")]
    cfg = RetrievalConfig(top_n=5, candidate_depth=10)
    engine = RetrievalEngine.build(chunks, embed_fn)

    def broken_embed(texts):
        raise GatewayError("embedding service down")

    engine._embed = broken_embed
    result = engine.hybrid_search("slack", PUBLIC, cfg)
    assert result.degraded
    assert result.chunk_ids == ["k00000"]

    engine._embed = None
    result = engine.hybrid_search("slack", PUBLIC, cfg)
    assert result.degraded and result.chunk_ids == ["k00000"]


def test_empty_engine_and_empty_results():
    engine = RetrievalEngine.build([], embed_fn)
    assert len(engine) == 0
    assert engine.bm25_search("anything", PUBLIC, 5) == []
    assert engine.vector_search(np.zeros(4), PUBLIC, 5) == []
    result = engine.hybrid_search("anything", PUBLIC, RetrievalConfig())
    assert result.hits == ()


def test_config_validation():
    with pytest.raises(ValueError):
        RetrievalConfig(top_n=20, candidate_depth=10)
    with pytest.raises(ValueError):
        RetrievalConfig(rrf_k=0.0)
    with pytest.raises(ValueError):
        RetrievalConfig(bm25_b=1.5)


def test_chunk_lookup_and_groups():
    engine, chunks = build_engine(
        [("a", frozenset({"g1"})), ("b", frozenset({"g2", "g3"}))]
    )
    assert engine.chunk("k00001").text == "b"
    with pytest.raises(KeyError):
        engine.chunk("nope")
    assert engine.all_groups() == frozenset({"g1", "g2", "g3"})


# -- persistence --------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    rng = random.Random(5)
    specs = [(random_text(rng), random_groups(rng, ["g"])) for _ in range(12)]
    engine, _ = build_engine(specs)
    engine.save(tmp_path / "index")
    loaded = RetrievalEngine.load(tmp_path / "index", embed_fn)
    assert len(loaded) == len(engine)
    assert np.array_equal(loaded._vectors, engine._vectors)
    for query in ("slack timing", "routing", "zzz"):
        for filt in (PUBLIC, AccessFilter(frozenset({"g"}))):
            assert loaded.bm25_search(query, filt, 20) == engine.bm25_search(
                query, filt, 20
            )
            a = loaded.hybrid_search(query, filt, RetrievalConfig())
            b = engine.hybrid_search(query, filt, RetrievalConfig())
            assert a == b


def test_load_rejects_bad_magic_and_version(tmp_path):
    engine, _ = build_engine([("a", frozenset())])
    engine.save(tmp_path)
    lex = tmp_path / "lexical.idx"
    original = lex.read_bytes()
    lex.write_bytes(b"XXXX" + original[4:])
    with pytest.raises(ValueError, match="magic"):
        RetrievalEngine.load(tmp_path, embed_fn)
    lex.write_bytes(original[:4] + bytes([99]) + original[5:])
    with pytest.raises(ValueError, match="version"):
        RetrievalEngine.load(tmp_path, embed_fn)


# -- small ad-hoc scorer --------------------------------------------------------------


def test_bm25_scores_helper_matches_oracle():
    texts = ["slack timing report", "devops pipeline", "slack slack"]
    scores = bm25_scores(texts, "slack report")
    want = ref_bm25_scores_as_list(texts, "slack report")
    assert scores == want
    assert bm25_scores([], "q") == []
    assert bm25_scores(["", ""], "q") == [0.0, 0.0]
    assert bm25_scores(["a b"], "") == [0.0]


def ref_bm25_scores_as_list(texts, query):
    from oracles import ref_bm25_scores

    scored = ref_bm25_scores(texts, [True] * len(texts), query)
    return [scored.get(i, 0.0) for i in range(len(texts))]
