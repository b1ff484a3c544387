"""Training-text production: Q2A filtering and refinement, few-shot example
selection from the query history, and synthetic Q/A generation.

One synthetic pair is generated per source document. The synthesis prompt asks
the model to judge document complexity first and then write either a
challenging, reasoning-heavy question or a general comprehension question;
optionally it carries a few-shot block of real user questions picked by BM25
relevance to the document.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from raftkit.corpus import Document, HistoryEntry
from raftkit.gateway import GatewayError, ModelGateway
from raftkit.prompts import QAParseError, parse_qa, render_refine_prompt, render_synth_prompt
from raftkit.retrieval import bm25_scores

log = logging.getLogger("raftkit.synth")

PROVENANCES = ("Q2A_raw", "Q2A_refined", "Synthetic", "Synthetic_RAFS")

RAFS_QUERY_CHAR_CAP = 10_000


@dataclass(frozen=True)
class QAPair:
    qa_id: str
    question: str
    answer: str
    provenance: str
    source_doc_id: str | None = None
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise ValueError("question and answer must be non-empty")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance: {self.provenance!r}")
        if self.provenance.startswith("Synthetic") and not self.source_doc_id:
            raise ValueError("synthetic pairs require source_doc_id")

    def to_record(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question": self.question,
            "answer": self.answer,
            "provenance": self.provenance,
            "source_doc_id": self.source_doc_id,
            "category": self.category,
        }

    @classmethod
    def from_record(cls, record: dict) -> "QAPair":
        return cls(
            qa_id=record["qa_id"],
            question=record["question"],
            answer=record["answer"],
            provenance=record["provenance"],
            source_doc_id=record.get("source_doc_id"),
            category=record.get("category"),
        )


@dataclass(frozen=True)
class SynthConfig:
    rafs_k: int = 5
    use_rafs: bool = False
    question_delimiter: str = "QUESTION:"
    answer_delimiter: str = "ANSWER:"

    def __post_init__(self) -> None:
        if self.rafs_k < 0:
            raise ValueError("rafs_k must be >= 0")
        if not self.question_delimiter or not self.answer_delimiter:
            raise ValueError("delimiters must be non-empty")


@dataclass(frozen=True)
class ForumPost:
    """A raw forum thread: question plus (possibly absent) marked best answer."""

    question: str
    answer: str | None
    best_marked: bool


def _qa_id(*parts: str) -> str:
    h = hashlib.sha1("\x00".join(parts).encode("utf-8")).hexdigest()
    return h[:12]


def _is_url_only(text: str) -> bool:
    t = text.strip()
    return (t.startswith("http://") or t.startswith("https://")) and " " not in t


def filter_q2a_posts(posts: list[ForumPost]) -> list[QAPair]:
    """Keep posts with a marked best answer whose text is more than a bare
    reference link."""
    kept: list[QAPair] = []
    for post in posts:
        if not post.best_marked or post.answer is None:
            continue
        answer = post.answer.strip()
        question = post.question.strip()
        if not answer or not question or _is_url_only(answer):
            continue
        kept.append(
            QAPair(
                qa_id="q2a-" + _qa_id(question, answer),
                question=question,
                answer=answer,
                provenance="Q2A_raw",
            )
        )
    return kept


def refine_answer(qa: QAPair, gateway: ModelGateway) -> QAPair:
    """Rewrite a raw forum answer into a standalone one (grammar, clarity,
    no greetings). The question is untouched."""
    if qa.provenance != "Q2A_raw":
        raise ValueError(f"can only refine Q2A_raw pairs, got {qa.provenance}")
    prompt = render_refine_prompt(qa.question, qa.answer)
    refined = gateway.generate(prompt).strip()
    if not refined:
        raise ValueError("empty refinement")
    return replace(qa, answer=refined, provenance="Q2A_refined")


def select_rafs_examples(
    target_doc: Document, history: list[HistoryEntry], k: int
) -> list[str]:
    """Top-k history questions by BM25 relevance of each entry's
    question+response text to the document body. Ties break by entry_id."""
    if k <= 0 or not history:
        return []
    texts = [f"{e.question} {e.response}" for e in history]
    query = target_doc.body[:RAFS_QUERY_CHAR_CAP]
    scores = bm25_scores(texts, query)
    order = sorted(
        range(len(history)), key=lambda i: (-scores[i], history[i].entry_id)
    )
    return [history[i].question for i in order[:k]]


def generate_synthetic_qa(
    doc: Document,
    rafs: list[str],
    cfg: SynthConfig,
    gateway: ModelGateway,
) -> QAPair:
    """One synthetic Q/A pair for a document.

    Raises QAParseError when the model output lacks the delimiters or yields
    an empty field; the raw output rides on the exception for logging.
    """
    prompt = render_synth_prompt(doc.body, rafs, cfg.rafs_k)
    raw = gateway.generate(prompt)
    question, answer = parse_qa(raw, cfg.question_delimiter, cfg.answer_delimiter)
    rafs_used = bool(rafs) and cfg.rafs_k > 0
    return QAPair(
        qa_id="syn-" + _qa_id(doc.doc_id, question),
        question=question,
        answer=answer,
        provenance="Synthetic_RAFS" if rafs_used else "Synthetic",
        source_doc_id=doc.doc_id,
        category=doc.category,
    )


def generate_for_corpus(
    docs: list[Document],
    history: list[HistoryEntry],
    cfg: SynthConfig,
    gateway: ModelGateway,
    max_workers: int = 4,
) -> tuple[list[QAPair], list[tuple[str, str]]]:
    """Synthetic generation over a document set, one pair per document.

    Documents run in parallel up to the gateway's in-flight limit; output is
    sorted by doc_id so results are order-independent. Failed documents are
    skipped and returned as (doc_id, reason).
    """
    ordered = sorted(docs, key=lambda d: d.doc_id)

    def one(doc: Document) -> QAPair:
        rafs = select_rafs_examples(doc, history, cfg.rafs_k) if cfg.use_rafs else []
        return generate_synthetic_qa(doc, rafs, cfg, gateway)

    pairs: list[QAPair] = []
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for doc, outcome in zip(ordered, pool.map(_safely(one), ordered)):
            if isinstance(outcome, QAPair):
                pairs.append(outcome)
            else:
                log.warning("skipping %s: %s", doc.doc_id, outcome)
                failures.append((doc.doc_id, outcome))
    return pairs, failures


def _safely(fn):
    def wrapped(doc: Document):
        try:
            return fn(doc)
        except QAParseError as exc:
            return f"parse error: {exc} (raw: {exc.raw[:200]!r})"
        except (GatewayError, ValueError) as exc:
            return f"generation failed: {exc}"

    return wrapped
