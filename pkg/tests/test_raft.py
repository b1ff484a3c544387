import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from raftkit.gateway import hash_embedding
from raftkit.jsonl import read_jsonl
from raftkit.prompts import NO_CONTEXT_BLOCK, template_version
from raftkit.raft import (
    DEFAULT_IDK_LABEL,
    IdkPolicy,
    RaftExample,
    apportion_split,
    assign_splits,
    augment_with_idk,
    build_datasets,
    build_raft_example,
    emit_dataset,
    make_manifest,
    make_missing_context,
)
from raftkit.retrieval import AccessFilter, RetrievalConfig, RetrievalEngine
from raftkit.synth import QAPair

from conftest import make_chunk

DIM = 16
PUBLIC = AccessFilter.public()
ALL = AccessFilter(frozenset({"g1", "g2"}))


def embed_fn(texts):
    return [hash_embedding(t, DIM) for t in texts]


# Reference corpus split: category sizes and their expected test allocations.
TABLE_SIZES = {"ParamRef": 2, "Timing": 27, "DevOps": 263, "DesignGuide": 328, "CmdRef": 380}
TABLE_TEST = {"ParamRef": 1, "Timing": 3, "DevOps": 26, "DesignGuide": 33, "CmdRef": 37}


# -- apportionment -----------------------------------------------------------------


def test_apportion_reference_table():
    plan = apportion_split(TABLE_SIZES, 0.1, 1000)
    assert {n: t for n, (_, t) in plan.per_category.items()} == TABLE_TEST
    assert {n: tr for n, (tr, _) in plan.per_category.items()} == {
        n: TABLE_SIZES[n] - TABLE_TEST[n] for n in TABLE_SIZES
    }
    assert plan.total_test == 100


def test_apportion_single_category_minimum_one():
    plan = apportion_split({"X": 10}, 0.1, 10)
    assert plan.per_category == {"X": (9, 1)}


def test_apportion_two_equal_categories():
    plan = apportion_split({"A": 10, "B": 10}, 0.1, 20)
    assert plan.per_category == {"A": (9, 1), "B": (9, 1)}


def test_apportion_minimum_one_funded_by_smallest_remainder():
    # quotas 0.1/9.9 -> floors 0/9, the extra goes to Big, then the
    # minimum-one repair moves one slot from Big back to Tiny
    plan = apportion_split({"Tiny": 1, "Big": 99}, 0.1, 100)
    assert plan.per_category == {"Tiny": (0, 1), "Big": (90, 9)}


def test_apportion_infeasible_minimums():
    with pytest.raises(ValueError, match="cannot give each"):
        apportion_split({"A": 1, "B": 1, "C": 1}, 0.1, 3)


def test_apportion_input_validation():
    with pytest.raises(ValueError, match="positive"):
        apportion_split({"A": 0}, 0.1, 0)
    with pytest.raises(ValueError, match="sum to total"):
        apportion_split({"A": 5}, 0.1, 10)
    with pytest.raises(ValueError, match="test_fraction"):
        apportion_split({"A": 10}, 1.0, 10)


@given(
    st.dictionaries(
        st.sampled_from(["A", "B", "C", "D", "E"]),
        st.integers(min_value=1, max_value=80),
        min_size=1,
        max_size=5,
    ),
    st.floats(min_value=0.05, max_value=0.5),
)
def test_apportion_invariants(counts, fraction):
    total = sum(counts.values())
    try:
        plan = apportion_split(counts, fraction, total)
    except ValueError:
        return  # infeasible draws are allowed to refuse
    tests = {n: t for n, (_, t) in plan.per_category.items()}
    assert sum(tests.values()) == plan.total_test
    for name, count in counts.items():
        train, test = plan.per_category[name]
        assert test >= 1
        assert test <= count
        assert train + test == count


def test_apportion_is_deterministic():
    assert apportion_split(TABLE_SIZES, 0.1, 1000) == apportion_split(TABLE_SIZES, 0.1, 1000)


# -- split assignment --------------------------------------------------------------


def make_pairs(n, category, doc_prefix="src"):
    return [
        QAPair(
            qa_id=f"{category.lower()}-{i:03d}",
            question=f"question {category} {i}?",
            answer=f"answer {i}",
            provenance="Synthetic",
            source_doc_id=f"{doc_prefix}-{category}-{i}",
            category=category,
        )
        for i in range(n)
    ]


def test_assign_splits_respects_plan_counts():
    pairs = make_pairs(10, "A") + make_pairs(10, "B")
    plan = apportion_split({"A": 10, "B": 10}, 0.1, 20)
    assignment = assign_splits(pairs, plan, seed=3)
    assert set(assignment) == {qa.qa_id for qa in pairs}
    for cat in ("A", "B"):
        n_test = sum(
            1 for qa in pairs if qa.category == cat and assignment[qa.qa_id] == "test"
        )
        assert n_test == plan.test_count(cat)


def test_assign_splits_seed_determinism():
    pairs = make_pairs(20, "A")
    plan = apportion_split({"A": 20}, 0.1, 20)
    a = assign_splits(pairs, plan, seed=5)
    b = assign_splits(pairs, plan, seed=5)
    assert a == b
    c = assign_splits(list(reversed(pairs)), plan, seed=5)
    assert a == c  # input order must not matter


def test_assign_splits_different_seeds_differ():
    pairs = make_pairs(40, "A")
    plan = apportion_split({"A": 40}, 0.1, 40)
    alternatives = {
        tuple(sorted(q for q, s in assign_splits(pairs, plan, seed).items() if s == "test"))
        for seed in range(6)
    }
    assert len(alternatives) > 1


# -- example construction ----------------------------------------------------------


def build_corpus_engine():
    """Ten chunks: k00000..k00003 from doc dsrc (metastability), rest unrelated."""
    chunks = [
        make_chunk(i, f"flipflop metastability synchronizer stage {i}", frozenset(), doc_id="dsrc")
        for i in range(4)
    ]
    chunks += [
        make_chunk(i, f"power grid decap placement note {i}", frozenset())
        for i in range(4, 10)
    ]
    return RetrievalEngine.build(chunks, embed_fn), chunks


def synthetic_pair(question="What causes flipflop metastability?", source="dsrc"):
    return QAPair(
        qa_id="syn-cafef00dbead",
        question=question,
        answer="Violated setup windows.",
        provenance="Synthetic",
        source_doc_id=source,
        category="Timing",
    )


def test_build_example_retrieves_source_chunks():
    engine, _ = build_corpus_engine()
    ex = build_raft_example(synthetic_pair(), engine, RetrievalConfig(top_n=4), PUBLIC)
    assert ex.example_id.startswith("rx-")
    assert ex.chunk_ids
    assert all(engine.chunk(cid).doc_id == "dsrc" for cid in ex.chunk_ids[:2])
    assert ex.answer == "Violated setup windows."
    assert ex.split == "train"
    assert not ex.missing_context


def test_build_example_empty_retrieval_still_constructs():
    chunks = [make_chunk(i, "restricted text", frozenset({"g-secret"})) for i in range(3)]
    engine = RetrievalEngine.build(chunks, embed_fn)
    ex = build_raft_example(synthetic_pair(), engine, RetrievalConfig(), AccessFilter(frozenset({"other"})))
    assert ex.chunk_ids == ()
    assert NO_CONTEXT_BLOCK in ex.prompt


def test_build_example_question_appears_exactly_once():
    engine, _ = build_corpus_engine()
    question = "What causes flipflop metastability in synchronizer chains?"
    ex = build_raft_example(synthetic_pair(question), engine, RetrievalConfig(), PUBLIC)
    assert ex.prompt.count(question) == 1


def test_build_example_rafs_flag_follows_provenance():
    engine, _ = build_corpus_engine()
    qa = QAPair(
        qa_id="syn-x", question="q?", answer="a", provenance="Synthetic_RAFS",
        source_doc_id="dsrc", category="Timing",
    )
    assert build_raft_example(qa, engine, RetrievalConfig(), PUBLIC).rafs_used
    assert not build_raft_example(synthetic_pair(), engine, RetrievalConfig(), PUBLIC).rafs_used


def test_example_split_validation_and_round_trip():
    engine, _ = build_corpus_engine()
    ex = build_raft_example(synthetic_pair(), engine, RetrievalConfig(), PUBLIC)
    with pytest.raises(ValueError, match="split"):
        RaftExample(**{**ex.to_record(), "chunk_ids": ex.chunk_ids, "split": "dev"})
    record = ex.to_record()
    assert list(record) == [
        "example_id", "question", "prompt", "answer", "chunk_ids",
        "source_doc_id", "category", "split", "missing_context", "rafs_used",
    ]
    assert RaftExample.from_record(record) == ex


# -- missing-context variants ------------------------------------------------------


def test_missing_context_all_chunks_from_source():
    engine, chunks = build_corpus_engine()
    ex = build_raft_example(synthetic_pair(), engine, RetrievalConfig(top_n=3), PUBLIC)
    assert all(engine.chunk(cid).doc_id == "dsrc" for cid in ex.chunk_ids)
    mc = make_missing_context(ex, engine)
    assert mc.chunk_ids == ()
    assert NO_CONTEXT_BLOCK in mc.prompt
    assert mc.missing_context
    assert mc.answer == ex.answer
    assert mc.example_id == ex.example_id + "-mc"


def test_missing_context_removes_only_source_chunks():
    engine, chunks = build_corpus_engine()
    base = build_raft_example(synthetic_pair(), engine, RetrievalConfig(), PUBLIC)
    mixed = RaftExample(
        **{
            **base.to_record(),
            "chunk_ids": ("k00005", "k00001", "k00007", "k00002", "k00009"),
        }
    )
    mc = make_missing_context(mixed, engine)
    assert mc.chunk_ids == ("k00005", "k00007", "k00009")  # order preserved
    assert engine.chunk("k00005").text in mc.prompt
    assert engine.chunk("k00001").text not in mc.prompt


def test_missing_context_no_source_chunks_is_flag_only():
    engine, _ = build_corpus_engine()
    base = build_raft_example(synthetic_pair(), engine, RetrievalConfig(), PUBLIC)
    foreign = RaftExample(**{**base.to_record(), "chunk_ids": ("k00006", "k00008")})
    mc = make_missing_context(foreign, engine)
    assert mc.chunk_ids == foreign.chunk_ids
    assert mc.missing_context
    assert mc.question == foreign.question


def test_missing_context_requires_source_doc():
    engine, _ = build_corpus_engine()
    base = build_raft_example(synthetic_pair(), engine, RetrievalConfig(), PUBLIC)
    orphan = RaftExample(**{**base.to_record(), "chunk_ids": base.chunk_ids, "source_doc_id": None})
    with pytest.raises(ValueError, match="source_doc_id"):
        make_missing_context(orphan, engine)


# -- IDK augmentation --------------------------------------------------------------


def train_set(engine, n):
    cfg = RetrievalConfig(top_n=4)
    pairs = [
        QAPair(
            qa_id=f"syn-{i:04d}", question=f"flipflop metastability {i}?",
            answer=f"answer {i}", provenance="Synthetic", source_doc_id="dsrc",
            category="Timing",
        )
        for i in range(n)
    ]
    return [build_raft_example(qa, engine, cfg, PUBLIC) for qa in pairs]


def test_idk_appends_floor_fraction():
    engine, _ = build_corpus_engine()
    train = train_set(engine, 50)
    out = augment_with_idk(train, IdkPolicy(fraction=0.1, seed=1), engine)
    assert len(out) == 55
    assert out[:50] == train  # originals untouched, in order
    added = out[50:]
    for ex in added:
        assert ex.example_id.endswith("-idk")
        assert ex.answer == DEFAULT_IDK_LABEL
        assert ex.missing_context
        assert ex.split == "train"
        assert all(engine.chunk(cid).doc_id != ex.source_doc_id for cid in ex.chunk_ids)


def test_idk_zero_fraction_is_identity():
    engine, _ = build_corpus_engine()
    train = train_set(engine, 10)
    assert augment_with_idk(train, IdkPolicy(fraction=0.0), engine) == train


def test_idk_seed_determinism():
    engine, _ = build_corpus_engine()
    train = train_set(engine, 30)
    a = augment_with_idk(train, IdkPolicy(fraction=0.1, seed=2), engine)
    b = augment_with_idk(train, IdkPolicy(fraction=0.1, seed=2), engine)
    assert a == b
    picks = {
        tuple(e.example_id for e in augment_with_idk(train, IdkPolicy(0.1, seed=s), engine)[30:])
        for s in range(6)
    }
    assert len(picks) > 1


def test_idk_rejects_test_split_and_policy_range():
    engine, _ = build_corpus_engine()
    train = train_set(engine, 5)
    smuggled = train + [RaftExample(**{**train[0].to_record(), "chunk_ids": (), "split": "test", "example_id": "rx-other"})]
    with pytest.raises(ValueError, match="train-split"):
        augment_with_idk(smuggled, IdkPolicy(fraction=0.2), engine)
    with pytest.raises(ValueError, match="fraction"):
        IdkPolicy(fraction=1.5)


def test_idk_needs_source_linked_examples():
    engine, _ = build_corpus_engine()
    base = train_set(engine, 4)
    unlinked = [
        RaftExample(**{**e.to_record(), "chunk_ids": e.chunk_ids, "source_doc_id": None})
        for e in base
    ]
    with pytest.raises(ValueError, match="source-linked"):
        augment_with_idk(unlinked, IdkPolicy(fraction=0.5), engine)


# -- emission ----------------------------------------------------------------------


def full_example_set(engine):
    train = train_set(engine, 12)
    augmented = augment_with_idk(train, IdkPolicy(fraction=0.25, seed=9), engine)
    test_pairs = [
        QAPair(
            qa_id=f"tst-{i:04d}", question=f"decap placement {i}?", answer=f"t{i}",
            provenance="Synthetic", source_doc_id="dsrc", category="Timing",
        )
        for i in range(3)
    ]
    test = [build_raft_example(qa, engine, RetrievalConfig(top_n=4), PUBLIC, split="test") for qa in test_pairs]
    test_mc = [make_missing_context(e, engine) for e in test]
    return augmented + test + test_mc


def test_emit_round_trip_and_file_partition(tmp_path):
    engine, _ = build_corpus_engine()
    examples = full_example_set(engine)
    manifest = make_manifest(RetrievalConfig(), IdkPolicy(fraction=0.25, seed=9))
    paths = emit_dataset(examples, tmp_path / "out", manifest)

    train_rows = [RaftExample.from_record(r) for r in read_jsonl(paths["train"])]
    test_rows = [RaftExample.from_record(r) for r in read_jsonl(paths["test"])]
    mc_rows = [RaftExample.from_record(r) for r in read_jsonl(paths["test_missing_context"])]
    assert train_rows == [e for e in examples if e.split == "train"]
    assert test_rows == [e for e in examples if e.split == "test" and not e.missing_context]
    assert mc_rows == [e for e in examples if e.split == "test" and e.missing_context]
    assert all(not e.missing_context or e.answer for e in mc_rows)


def test_emit_is_byte_stable(tmp_path):
    engine, _ = build_corpus_engine()
    examples = full_example_set(engine)
    manifest = make_manifest(RetrievalConfig(), IdkPolicy(fraction=0.25, seed=9))
    first = emit_dataset(examples, tmp_path / "a", manifest)
    second = emit_dataset(examples, tmp_path / "b", manifest)
    for key in first:
        assert first[key].read_bytes() == second[key].read_bytes()


def test_manifest_records_reference_hyperparameters(tmp_path):
    manifest = make_manifest(RetrievalConfig(top_n=7), IdkPolicy(fraction=0.2, seed=4))
    paths = emit_dataset([], tmp_path, manifest)
    written = json.loads(paths["manifest"].read_text())
    ref = written["reference_training"]
    assert ref["lora_rank"] == 128
    assert ref["epochs"] == 5
    assert ref["lr"] == 2e-5
    assert ref["batch"] == 8
    assert ref["grad_accum"] == 2
    assert ref["warmup_ratio"] == 0.1
    assert ref["max_seq"] == 8192
    assert written["retrieval"]["top_n"] == 7
    assert written["idk_policy"] == {"fraction": 0.2, "idk_label": DEFAULT_IDK_LABEL, "seed": 4}
    assert written["template_version"] == template_version()
    assert written["counts"] == {"train": 0, "test": 0, "test_missing_context": 0}


# -- full assembly -----------------------------------------------------------------


def test_build_datasets_end_to_end():
    engine, _ = build_corpus_engine()
    pairs = [
        QAPair(
            qa_id=f"syn-{i:04d}", question=f"metastability question {i}?",
            answer=f"a{i}", provenance="Synthetic", source_doc_id="dsrc", category="Timing",
        )
        for i in range(10)
    ] + [
        QAPair(
            qa_id=f"q2a-{i:04d}", question=f"decap question {i}?", answer=f"b{i}",
            provenance="Q2A_refined", category="Power",
        )
        for i in range(10)
    ]
    examples, plan = build_datasets(
        pairs, engine, RetrievalConfig(top_n=4), PUBLIC,
        IdkPolicy(fraction=0.1, seed=0), test_fraction=0.1, split_seed=17,
    )
    assert plan.per_category == {"Power": (9, 1), "Timing": (9, 1)}
    train = [e for e in examples if e.split == "train"]
    test = [e for e in examples if e.split == "test"]
    idk = [e for e in train if e.example_id.endswith("-idk")]
    assert len(idk) == 1  # floor(0.1 * 18)
    assert len([e for e in test if not e.missing_context]) == 2
    # only the source-linked test example gets a missing-context variant
    assert len([e for e in test if e.missing_context]) == 1
    # determinism across runs
    again, _ = build_datasets(
        pairs, engine, RetrievalConfig(top_n=4), PUBLIC,
        IdkPolicy(fraction=0.1, seed=0), test_fraction=0.1, split_seed=17,
    )
    assert examples == again


def test_build_datasets_rejects_duplicate_ids():
    engine, _ = build_corpus_engine()
    qa = synthetic_pair()
    with pytest.raises(ValueError, match="duplicate"):
        build_datasets([qa, qa], engine, RetrievalConfig(), PUBLIC, IdkPolicy(fraction=0.0))
