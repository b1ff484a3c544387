"""Query handling and the HTTP surface.

A query resolves the user to access groups (unknown users get the empty set,
which means public-only), runs filtered hybrid retrieval, renders the same
prompt template used for training data, generates an answer, and logs the
exchange to history. The response cites exactly the chunks placed in the
prompt, in prompt order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from raftkit.config import AssistantConfig, load_users
from raftkit.corpus import CorpusStore
from raftkit.gateway import GatewayError, ModelGateway
from raftkit.prompts import render_raft_prompt
from raftkit.retrieval import AccessFilter, RetrievalEngine

log = logging.getLogger("raftkit.service")


@dataclass(frozen=True)
class ProvenanceChunk:
    chunk_id: str
    doc_id: str
    category: str
    access_groups: tuple[str, ...]
    fused_score: float

    def to_record(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "category": self.category,
            "access_groups": list(self.access_groups),
            "fused_score": self.fused_score,
        }


@dataclass(frozen=True)
class QueryResponse:
    answer: str
    provenance: tuple[ProvenanceChunk, ...]
    degraded: bool
    timing_ms: float

    def to_record(self) -> dict:
        return {
            "answer": self.answer,
            "provenance": [p.to_record() for p in self.provenance],
            "degraded": self.degraded,
            "timing_ms": self.timing_ms,
        }


class GenerationFailed(RuntimeError):
    """Generation errored after retrieval succeeded; carries the provenance
    that was assembled so callers can still show what would have been cited."""

    def __init__(self, message: str, provenance: tuple[ProvenanceChunk, ...], degraded: bool):
        super().__init__(message)
        self.provenance = provenance
        self.degraded = degraded


@dataclass
class AssistantState:
    store: CorpusStore
    engine: RetrievalEngine
    gateway: ModelGateway
    users: dict[str, frozenset[str]]
    cfg: AssistantConfig


def build_state(
    cfg: AssistantConfig,
    gateway: ModelGateway | None = None,
) -> AssistantState:
    """Wire up store, user directory, gateway, and the retrieval engine
    (loaded from the index directory when present, else built in memory
    from the persisted chunks)."""
    store = CorpusStore(cfg.corpus_dir)
    gateway = gateway or ModelGateway(cfg.gateway)
    index_dir = cfg.index_dir
    if (index_dir / "lexical.idx").exists():
        engine = RetrievalEngine.load(index_dir, embed_fn=gateway.embed)
    else:
        engine = RetrievalEngine.build(store.load_chunks(), embed_fn=gateway.embed)
    users = load_users(cfg.users_file)
    return AssistantState(
        store=store, engine=engine, gateway=gateway, users=users, cfg=cfg
    )


def handle_query(
    state: AssistantState,
    user_id: str,
    question: str,
    top_n: int | None = None,
) -> QueryResponse:
    """Answer one question under the caller's access groups.

    Every cited chunk passed the access filter; an unknown user_id behaves
    exactly like a public user. One history entry is appended per successful
    query. Raises ValueError on an empty question and GenerationFailed when
    the model call errors (retrieval results ride on the exception).
    """
    if not question.strip():
        raise ValueError("question must be non-empty")
    started = time.perf_counter()
    groups = state.users.get(user_id, frozenset())
    rcfg = state.cfg.retrieval
    if top_n is not None:
        clamped = max(1, min(top_n, rcfg.candidate_depth))
        rcfg = replace(rcfg, top_n=clamped)
    result = state.engine.hybrid_search(question, AccessFilter(groups), rcfg)
    texts = [state.engine.chunk(cid).text for cid in result.chunk_ids]
    prompt, n_used = render_raft_prompt(question, texts, state.cfg.prompt_char_cap)
    provenance = []
    for hit in result.hits[:n_used]:
        chunk = state.engine.chunk(hit.chunk_id)
        provenance.append(
            ProvenanceChunk(
                chunk_id=chunk.chunk_id,
                doc_id=chunk.doc_id,
                category=chunk.category,
                access_groups=tuple(sorted(chunk.access_groups)),
                fused_score=hit.fused_score,
            )
        )
    provenance = tuple(provenance)
    try:
        answer = state.gateway.generate(prompt)
    except GatewayError as exc:
        raise GenerationFailed(str(exc), provenance, result.degraded) from exc
    state.store.append_history(question=question, response=answer, user_id=user_id or None)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return QueryResponse(
        answer=answer,
        provenance=provenance,
        degraded=result.degraded,
        timing_ms=elapsed_ms,
    )


class QueryBody(BaseModel):
    user_id: str = ""
    question: str
    top_n: int | None = None


def make_app(state: AssistantState) -> FastAPI:
    app = FastAPI(title="raftkit assistant", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/v1/query")
    def query(body: QueryBody):
        try:
            resp = handle_query(state, body.user_id, body.question, body.top_n)
        except ValueError as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})
        except GenerationFailed as exc:
            log.error("generation failed: %s", exc)
            return JSONResponse(
                status_code=502,
                content={
                    "error": str(exc),
                    "provenance": [p.to_record() for p in exc.provenance],
                    "degraded": exc.degraded,
                },
            )
        return resp.to_record()

    @app.get("/v1/history")
    def history(limit: int = 50):
        entries = state.store.fetch_history(limit)
        return {"entries": [e.to_record() for e in entries]}

    @app.get("/v1/corpus/stats")
    def corpus_stats():
        return state.store.stats()

    return app
