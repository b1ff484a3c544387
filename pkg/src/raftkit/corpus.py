"""Document corpus: ingestion, filtering, chunking, and the Q&A history store.

Documents are plain-text files with category and access-group metadata
assigned by path-pattern maps. Chunking is by character count with a fixed
overlap; chunks inherit the parent document's category and access groups.
Everything is persisted as newline-delimited JSON under a corpus directory:

    corpus/docs.jsonl
    corpus/chunks.jsonl
    corpus/history.jsonl
"""

from __future__ import annotations

import fnmatch
import hashlib
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from raftkit.jsonl import append_jsonl, dumps_record, read_jsonl

CATEGORIES = (
    "ParameterReference",
    "Timing",
    "DevOps",
    "DesignGuide",
    "CommandReference",
    "Other",
)

DOCS_FILE = "docs.jsonl"
CHUNKS_FILE = "chunks.jsonl"
HISTORY_FILE = "history.jsonl"


class EmptyDocumentError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    """Chunk geometry and document-length thresholds (character units)."""

    chunk_size: int = 2000
    overlap: int = 200
    min_doc_chars: int = 1000
    max_doc_chars: int = 10000

    def __post_init__(self) -> None:
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must satisfy 0 <= overlap < chunk_size")
        if self.min_doc_chars > self.max_doc_chars:
            raise ValueError("min_doc_chars must be <= max_doc_chars")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    category: str = "Other"
    access_groups: frozenset[str] = frozenset()
    source_path: str = ""

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category: {self.category!r}")
        object.__setattr__(self, "access_groups", frozenset(self.access_groups))

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "body": self.body,
            "category": self.category,
            "access_groups": sorted(self.access_groups),
            "source_path": self.source_path,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Document":
        return cls(
            doc_id=rec["doc_id"],
            title=rec["title"],
            body=rec["body"],
            category=rec["category"],
            access_groups=frozenset(rec["access_groups"]),
            source_path=rec.get("source_path", ""),
        )


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    start: int
    end: int
    text: str
    category: str = "Other"
    access_groups: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "access_groups", frozenset(self.access_groups))

    def to_record(self) -> dict:
        # key set and order are part of the on-disk contract
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "seq": self.seq,
            "start": self.start,
            "end": self.end,
            "text": self.text,
            "category": self.category,
            "access_groups": sorted(self.access_groups),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Chunk":
        return cls(
            chunk_id=rec["chunk_id"],
            doc_id=rec["doc_id"],
            seq=rec["seq"],
            start=rec["start"],
            end=rec["end"],
            text=rec["text"],
            category=rec["category"],
            access_groups=frozenset(rec["access_groups"]),
        )


@dataclass(frozen=True)
class HistoryEntry:
    entry_id: str
    question: str
    response: str
    timestamp: float
    user_id: str | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("history entry requires a non-empty question")

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "question": self.question,
            "response": self.response,
            "timestamp": self.timestamp,
            "user_id": self.user_id,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "HistoryEntry":
        return cls(
            entry_id=rec["entry_id"],
            question=rec["question"],
            response=rec["response"],
            timestamp=rec["timestamp"],
            user_id=rec.get("user_id"),
        )


@dataclass
class IngestStats:
    kept: int = 0
    dropped: int = 0
    chunks_per_category: dict[str, int] = field(default_factory=dict)
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def chunks_total(self) -> int:
        return sum(self.chunks_per_category.values())


def filter_and_truncate(docs: Sequence[Document], cfg: CorpusConfig) -> list[Document]:
    """Drop bodies shorter than min_doc_chars; truncate to the first max_doc_chars.

    Input order is preserved. Used to select synthetic-QA source documents;
    the serving corpus keeps full bodies (see ingest).
    """
    out: list[Document] = []
    for doc in docs:
        if len(doc.body) < cfg.min_doc_chars:
            continue
        if len(doc.body) > cfg.max_doc_chars:
            doc = Document(
                doc_id=doc.doc_id,
                title=doc.title,
                body=doc.body[: cfg.max_doc_chars],
                category=doc.category,
                access_groups=doc.access_groups,
                source_path=doc.source_path,
            )
        out.append(doc)
    return out


def chunk_count(body_len: int, cfg: CorpusConfig) -> int:
    if body_len <= cfg.chunk_size:
        return 1
    stride = cfg.chunk_size - cfg.overlap
    return math.ceil((body_len - cfg.overlap) / stride)


def chunk_document(doc: Document, cfg: CorpusConfig) -> list[Chunk]:
    """Split a document body into overlapping character windows.

    Chunk i spans [i*stride, i*stride + chunk_size) with stride =
    chunk_size - overlap; the final chunk ends at the body length and may be
    shorter than chunk_size (it is always longer than the overlap, so every
    consecutive pair shares exactly `overlap` characters).
    """
    body = doc.body
    if not body:
        raise EmptyDocumentError("empty document")
    stride = cfg.chunk_size - cfg.overlap
    n = len(body)
    count = chunk_count(n, cfg)
    chunks = []
    for i in range(count):
        start = i * stride
        end = min(start + cfg.chunk_size, n)
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}-c{i:05d}",
                doc_id=doc.doc_id,
                seq=i,
                start=start,
                end=end,
                text=body[start:end],
                category=doc.category,
                access_groups=doc.access_groups,
            )
        )
    return chunks


def doc_id_for_path(path: str | Path) -> str:
    norm = Path(path).as_posix()
    return "d" + hashlib.sha1(norm.encode("utf-8")).hexdigest()[:12]


def match_pattern_map(path: str, pattern_map: Mapping[str, object]):
    """First pattern (insertion order) whose glob matches the path, else None."""
    posix = Path(path).as_posix()
    name = Path(path).name
    for pattern, value in pattern_map.items():
        if fnmatch.fnmatch(posix, pattern) or fnmatch.fnmatch(name, pattern):
            return value
    return None


class CorpusStore:
    """Directory-backed corpus. Ingestion rewrites the store as one batch;
    history appends are serialized and durable."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._history_lock = threading.Lock()

    # -- paths -------------------------------------------------------------

    @property
    def docs_path(self) -> Path:
        return self.root / DOCS_FILE

    @property
    def chunks_path(self) -> Path:
        return self.root / CHUNKS_FILE

    @property
    def history_path(self) -> Path:
        return self.root / HISTORY_FILE

    # -- ingestion ---------------------------------------------------------

    def ingest(
        self,
        paths: Sequence[str | Path],
        group_map: Mapping[str, Iterable[str]] | None = None,
        category_map: Mapping[str, str] | None = None,
        cfg: CorpusConfig | None = None,
    ) -> IngestStats:
        """Read text files, drop bodies below min_doc_chars, chunk, persist.

        Deterministic ids (derived from the source path) make re-ingestion of
        the same inputs idempotent. Unreadable files are recorded as errors
        and skipped. Bodies are stored in full; truncation to max_doc_chars
        only applies to synthetic-QA source selection (filter_and_truncate).
        """
        cfg = cfg or CorpusConfig()
        group_map = group_map or {}
        category_map = category_map or {}
        stats = IngestStats()
        docs: list[Document] = []
        chunks: list[Chunk] = []
        for path in paths:
            try:
                body = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                stats.errors.append((str(path), str(exc)))
                continue
            if len(body) < cfg.min_doc_chars:
                stats.dropped += 1
                continue
            groups = match_pattern_map(str(path), group_map) or ()
            category = match_pattern_map(str(path), category_map) or "Other"
            doc = Document(
                doc_id=doc_id_for_path(path),
                title=Path(path).stem,
                body=body,
                category=category,
                access_groups=frozenset(groups),
                source_path=Path(path).as_posix(),
            )
            doc_chunks = chunk_document(doc, cfg)
            docs.append(doc)
            chunks.extend(doc_chunks)
            stats.kept += 1
            stats.chunks_per_category[category] = (
                stats.chunks_per_category.get(category, 0) + len(doc_chunks)
            )
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.docs_path, "w", encoding="utf-8") as fh:
            for doc in docs:
                fh.write(dumps_record(doc.to_record()) + "\n")
        with open(self.chunks_path, "w", encoding="utf-8") as fh:
            for chunk in chunks:
                fh.write(dumps_record(chunk.to_record()) + "\n")
        return stats

    def load_docs(self) -> list[Document]:
        if not self.docs_path.exists():
            return []
        return [Document.from_record(r) for r in read_jsonl(self.docs_path)]

    def load_chunks(self) -> list[Chunk]:
        if not self.chunks_path.exists():
            return []
        return [Chunk.from_record(r) for r in read_jsonl(self.chunks_path)]

    # -- history -----------------------------------------------------------

    def append_history(
        self,
        question: str,
        response: str,
        user_id: str | None = None,
        timestamp: float | None = None,
    ) -> str:
        if not question.strip():
            raise ValueError("history entry requires a non-empty question")
        with self._history_lock:
            entry_id = f"h{self._history_len():08d}"
            entry = HistoryEntry(
                entry_id=entry_id,
                question=question,
                response=response,
                timestamp=time.time() if timestamp is None else timestamp,
                user_id=user_id,
            )
            append_jsonl(self.history_path, entry.to_record())
        return entry_id

    def _history_len(self) -> int:
        if not self.history_path.exists():
            return 0
        with open(self.history_path, encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip())

    def fetch_history(self, limit: int) -> list[HistoryEntry]:
        """Most recent `limit` entries, oldest-first within the window."""
        if limit <= 0 or not self.history_path.exists():
            return []
        entries = [HistoryEntry.from_record(r) for r in read_jsonl(self.history_path)]
        return entries[-limit:]

    # -- reporting ---------------------------------------------------------

    def stats(self) -> dict:
        docs = self.load_docs()
        chunks = self.load_chunks()
        per_cat: dict[str, int] = {}
        for c in chunks:
            per_cat[c.category] = per_cat.get(c.category, 0) + 1
        return {
            "docs": len(docs),
            "chunks": len(chunks),
            "chunks_per_category": dict(sorted(per_cat.items())),
            "history_entries": self._history_len(),
        }
