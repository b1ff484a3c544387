"""RAFT dataset assembly.

Turns QA pairs into training/evaluation examples whose prompts embed
retrieved context, apportions per-category train/test splits, derives
missing-context variants (source-document chunks removed), injects seeded
"I don't know" training samples, and emits byte-stable JSONL plus a manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path

from raftkit.jsonl import write_jsonl
from raftkit.prompts import DEFAULT_PROMPT_CHAR_CAP, render_raft_prompt, template_version
from raftkit.retrieval import AccessFilter, RetrievalConfig, RetrievalEngine
from raftkit.synth import QAPair

DEFAULT_IDK_LABEL = (
    "I don't know. The provided context does not contain enough information "
    "to answer this question."
)

# Training setup the emitted datasets are sized for. Recorded in the manifest
# for downstream trainers; no training happens in this package.
REFERENCE_TRAINING = {
    "lora_rank": 128,
    "lora_alpha": 32,
    "lora_dropout": 0.0,
    "epochs": 5,
    "lr": 2e-5,
    "batch": 8,
    "grad_accum": 2,
    "warmup_ratio": 0.1,
    "weight_decay": 0.0,
    "lr_schedule": "cosine",
    "max_seq": 8192,
    "quantization": "4-bit",
}

SPLITS = ("train", "test")


@dataclass(frozen=True)
class RaftExample:
    example_id: str
    question: str
    prompt: str
    answer: str
    chunk_ids: tuple[str, ...]
    source_doc_id: str | None
    category: str | None
    split: str
    missing_context: bool = False
    rafs_used: bool = False

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    def to_record(self) -> dict:
        return {
            "example_id": self.example_id,
            "question": self.question,
            "prompt": self.prompt,
            "answer": self.answer,
            "chunk_ids": list(self.chunk_ids),
            "source_doc_id": self.source_doc_id,
            "category": self.category,
            "split": self.split,
            "missing_context": self.missing_context,
            "rafs_used": self.rafs_used,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RaftExample":
        return cls(
            example_id=record["example_id"],
            question=record["question"],
            prompt=record["prompt"],
            answer=record["answer"],
            chunk_ids=tuple(record["chunk_ids"]),
            source_doc_id=record.get("source_doc_id"),
            category=record.get("category"),
            split=record["split"],
            missing_context=record["missing_context"],
            rafs_used=record["rafs_used"],
        )


@dataclass(frozen=True)
class SplitPlan:
    per_category: dict[str, tuple[int, int]]  # category -> (train, test)
    total_test: int

    def __post_init__(self) -> None:
        if sum(t for _, t in self.per_category.values()) != self.total_test:
            raise ValueError("per-category test counts must sum to total_test")

    def test_count(self, category: str) -> int:
        return self.per_category[category][1]


@dataclass(frozen=True)
class IdkPolicy:
    fraction: float
    idk_label: str = DEFAULT_IDK_LABEL
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if not self.idk_label:
            raise ValueError("idk_label must be non-empty")


def apportion_split(
    category_counts: dict[str, int], test_fraction: float, total: int
) -> SplitPlan:
    """Largest-remainder apportionment of test slots with a minimum of one
    test example per nonempty category.

    T = round(test_fraction * total) slots are assigned by quota floor plus
    extras to the largest fractional remainders. Any category left at zero is
    raised to one, funded by decrementing the category with the smallest
    remainder among those holding more than one slot. Ties break by category
    name, so the plan is deterministic.
    """
    if any(c <= 0 for c in category_counts.values()):
        raise ValueError("category counts must be positive")
    if sum(category_counts.values()) != total:
        raise ValueError("category counts must sum to total")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    t_total = math.floor(test_fraction * total + 0.5)
    names = sorted(category_counts)
    if t_total < len(names):
        raise ValueError(
            f"cannot give each of {len(names)} categories a test example "
            f"with only {t_total} test slots"
        )
    quota = {n: category_counts[n] * test_fraction for n in names}
    test = {n: math.floor(quota[n]) for n in names}
    rem = {n: quota[n] - test[n] for n in names}
    extras = t_total - sum(test.values())
    if extras < 0:
        raise ValueError("quota floors exceed the test budget")
    for n in sorted(names, key=lambda n: (-rem[n], n))[:extras]:
        test[n] += 1
    for n in names:
        if test[n] > 0:
            continue
        donors = [d for d in names if test[d] > 1]
        if not donors:
            raise ValueError("no donor category available for minimum-one repair")
        donor = min(donors, key=lambda d: (rem[d], d))
        test[donor] -= 1
        test[n] += 1
    for n in names:
        if test[n] > category_counts[n]:
            raise ValueError(f"category {n} too small for its test allocation")
    per_category = {n: (category_counts[n] - test[n], test[n]) for n in names}
    return SplitPlan(per_category=per_category, total_test=t_total)


def assign_splits(
    pairs: list[QAPair], plan: SplitPlan, seed: int
) -> dict[str, str]:
    """qa_id -> split assignment. Within each category, test members are
    drawn uniformly at random under the seed; same seed, same assignment."""
    rng = random.Random(seed)
    by_cat: dict[str, list[QAPair]] = {}
    for qa in pairs:
        by_cat.setdefault(qa.category or "", []).append(qa)
    assignment: dict[str, str] = {}
    for cat in sorted(by_cat):
        members = sorted(by_cat[cat], key=lambda q: q.qa_id)
        n_test = plan.test_count(cat)
        test_ids = set(rng.sample([q.qa_id for q in members], n_test))
        for qa in members:
            assignment[qa.qa_id] = "test" if qa.qa_id in test_ids else "train"
    return assignment


def _example_id(qa_id: str) -> str:
    return "rx-" + hashlib.sha1(qa_id.encode("utf-8")).hexdigest()[:12]


def build_raft_example(
    qa: QAPair,
    engine: RetrievalEngine,
    cfg: RetrievalConfig,
    filt: AccessFilter,
    split: str = "train",
    char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
) -> RaftExample:
    """Retrieve context for the question and render the full prompt.

    Retrieval is unaware of the source document: its chunks appear only if
    they actually rank. An empty retrieval still yields a valid example whose
    prompt carries the no-context block.
    """
    result = engine.hybrid_search(qa.question, filt, cfg)
    chunk_ids = result.chunk_ids
    texts = [engine.chunk(cid).text for cid in chunk_ids]
    prompt, n_used = render_raft_prompt(qa.question, texts, char_cap)
    return RaftExample(
        example_id=_example_id(qa.qa_id),
        question=qa.question,
        prompt=prompt,
        answer=qa.answer,
        chunk_ids=tuple(chunk_ids[:n_used]),
        source_doc_id=qa.source_doc_id,
        category=qa.category,
        split=split,
        missing_context=False,
        rafs_used=qa.provenance == "Synthetic_RAFS",
    )


def make_missing_context(
    ex: RaftExample,
    engine: RetrievalEngine,
    char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
) -> RaftExample:
    """Copy of an example with every chunk from its source document removed
    and the prompt re-rendered. The answer is kept; relabeling to a refusal
    is a separate training-side step."""
    if not ex.source_doc_id:
        raise ValueError("missing-context variant requires source_doc_id")
    kept = [
        cid for cid in ex.chunk_ids if engine.chunk(cid).doc_id != ex.source_doc_id
    ]
    texts = [engine.chunk(cid).text for cid in kept]
    prompt, n_used = render_raft_prompt(ex.question, texts, char_cap)
    return replace(
        ex,
        example_id=ex.example_id + "-mc",
        prompt=prompt,
        chunk_ids=tuple(kept[:n_used]),
        missing_context=True,
    )


def augment_with_idk(
    train: list[RaftExample],
    policy: IdkPolicy,
    engine: RetrievalEngine,
    char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
) -> list[RaftExample]:
    """Append floor(fraction * |train|) refusal-labeled missing-context
    copies of seeded-random train examples. Originals are untouched; test
    examples never enter (inputs are validated to be train-split)."""
    for ex in train:
        if ex.split != "train":
            raise ValueError("augment_with_idk accepts only train-split examples")
    n_pick = math.floor(policy.fraction * len(train))
    if n_pick == 0:
        return list(train)
    eligible = [i for i, ex in enumerate(train) if ex.source_doc_id]
    if len(eligible) < n_pick:
        raise ValueError(
            f"need {n_pick} source-linked train examples for IDK augmentation, "
            f"have {len(eligible)}"
        )
    rng = random.Random(policy.seed)
    picked = sorted(rng.sample(eligible, n_pick))
    out = list(train)
    for i in picked:
        mc = make_missing_context(train[i], engine, char_cap)
        out.append(
            replace(mc, example_id=train[i].example_id + "-idk", answer=policy.idk_label)
        )
    return out


def make_manifest(
    retrieval_cfg: RetrievalConfig, idk_policy: IdkPolicy | None
) -> dict:
    manifest = {
        "retrieval": {
            "top_n": retrieval_cfg.top_n,
            "rrf_k": retrieval_cfg.rrf_k,
            "candidate_depth": retrieval_cfg.candidate_depth,
            "bm25_k1": retrieval_cfg.bm25_k1,
            "bm25_b": retrieval_cfg.bm25_b,
        },
        "template_version": template_version(),
        "reference_training": dict(REFERENCE_TRAINING),
    }
    if idk_policy is not None:
        manifest["idk_policy"] = {
            "fraction": idk_policy.fraction,
            "idk_label": idk_policy.idk_label,
            "seed": idk_policy.seed,
        }
    return manifest


def emit_dataset(
    examples: list[RaftExample], out_dir: str | Path, manifest: dict
) -> dict[str, Path]:
    """Write raft_train.jsonl, raft_test.jsonl, raft_test_missing_context.jsonl
    and manifest.json. Output bytes depend only on the inputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = [e for e in examples if e.split == "train"]
    test = [e for e in examples if e.split == "test" and not e.missing_context]
    test_mc = [e for e in examples if e.split == "test" and e.missing_context]
    paths = {
        "train": out_dir / "raft_train.jsonl",
        "test": out_dir / "raft_test.jsonl",
        "test_missing_context": out_dir / "raft_test_missing_context.jsonl",
        "manifest": out_dir / "manifest.json",
    }
    write_jsonl(paths["train"], (e.to_record() for e in train))
    write_jsonl(paths["test"], (e.to_record() for e in test))
    write_jsonl(paths["test_missing_context"], (e.to_record() for e in test_mc))
    full_manifest = dict(manifest)
    full_manifest["counts"] = {
        "train": len(train),
        "test": len(test),
        "test_missing_context": len(test_mc),
    }
    paths["manifest"].write_text(
        json.dumps(full_manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return paths


def build_datasets(
    pairs: list[QAPair],
    engine: RetrievalEngine,
    retrieval_cfg: RetrievalConfig,
    filt: AccessFilter,
    idk_policy: IdkPolicy,
    test_fraction: float = 0.1,
    split_seed: int = 17,
    char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
) -> tuple[list[RaftExample], SplitPlan]:
    """Full assembly: split plan, example construction, test missing-context
    variants (for source-linked pairs), and IDK train augmentation.

    Returns (examples, plan) with examples ordered train originals, IDK
    copies, test, test missing-context — all deterministic in the inputs.
    """
    ordered = sorted(pairs, key=lambda q: q.qa_id)
    if len({q.qa_id for q in ordered}) != len(ordered):
        raise ValueError("duplicate qa_ids")
    counts: dict[str, int] = {}
    for qa in ordered:
        key = qa.category or ""
        counts[key] = counts.get(key, 0) + 1
    plan = apportion_split(counts, test_fraction, len(ordered))
    assignment = assign_splits(ordered, plan, split_seed)
    train: list[RaftExample] = []
    test: list[RaftExample] = []
    for qa in ordered:
        ex = build_raft_example(
            qa, engine, retrieval_cfg, filt, split=assignment[qa.qa_id], char_cap=char_cap
        )
        (train if ex.split == "train" else test).append(ex)
    test_mc = [
        make_missing_context(ex, engine, char_cap) for ex in test if ex.source_doc_id
    ]
    augmented = augment_with_idk(train, idk_policy, engine, char_cap)
    return augmented + test + test_mc, plan
