"""Client layer for the three remote model capabilities: text generation,
embedding, and sequence scoring.

Two modes. "remote" talks JSON-over-HTTP with retries, per-endpoint in-flight
bounds, and a small body-template mechanism so different providers can be
adapted from config. "stub" is fully deterministic and offline: canned or
hash-derived generations, hash-seeded unit-vector embeddings, and the lexical
likelihood oracle scorer (an add-one-smoothed unigram model of the target
given the source, mean log-likelihood per token).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from raftkit.text import tokenize


class GatewayError(RuntimeError):
    """Remote call failed (after retries, when the failure was transient)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class _TransientError(Exception):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 1024
    temperature: float = 0.0
    stop: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class SequenceScore:
    """Mean per-token log-likelihood of the target given the source; <= 0."""

    value: float

    def __post_init__(self) -> None:
        if not self.value <= 0.0:
            raise ValueError(f"sequence score must be non-positive, got {self.value}")


_DEFAULT_GENERATE_TEMPLATE = (
    '{"prompt": {{prompt}}, "max_tokens": {{max_tokens}},'
    ' "temperature": {{temperature}}, "stop": {{stop}}}'
)
_DEFAULT_EMBED_TEMPLATE = '{"texts": {{texts}}}'
_DEFAULT_SCORE_TEMPLATE = (
    '{"source": {{source}}, "target": {{target}}, "prefix": {{prefix}}}'
)


@dataclass(frozen=True)
class GatewayConfig:
    mode: str = "stub"
    generate_url: str = ""
    embed_url: str = ""
    score_url: str = ""
    api_key_env: str = ""
    embed_dim: int = 64
    max_tokens: int = 1024
    temperature: float = 0.0
    max_in_flight: int = 4
    retry_attempts: int = 3
    backoff_base: float = 0.25
    timeout: float = 30.0
    generate_request_template: str = _DEFAULT_GENERATE_TEMPLATE
    generate_response_path: str = "text"
    embed_request_template: str = _DEFAULT_EMBED_TEMPLATE
    embed_response_path: str = "vectors"
    score_request_template: str = _DEFAULT_SCORE_TEMPLATE
    score_response_path: str = "score"

    def __post_init__(self) -> None:
        if self.mode not in ("stub", "remote"):
            raise ValueError(f"unknown gateway mode: {self.mode!r}")


def oracle_score(source: str, target: str, prefix: str = "") -> float:
    """Lexical likelihood oracle.

    Tokenize source and prefix+target (lowercase, split on non-alphanumerics).
    With V the vocabulary size of the union and L the source length,
    P(t|source) = (count(t in source) + 1) / (L + V); the score is the mean
    ln P over the target tokens. Add-one smoothing keeps it finite; it is
    always <= 0 and equals 0 only in degenerate one-token-vocabulary cases.
    """
    tgt_tokens = tokenize(prefix + target)
    if not tgt_tokens:
        raise ValueError("empty target")
    src_tokens = tokenize(source)
    vocab = len(set(src_tokens) | set(tgt_tokens))
    counts = Counter(src_tokens)
    length = len(src_tokens)
    logp = [math.log((counts[t] + 1) / (length + vocab)) for t in tgt_tokens]
    return math.fsum(logp) / len(logp)


def hash_embedding(text: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector derived from the text hash."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # not reachable in practice
        vec = np.zeros(dim)
        vec[0] = 1.0
        return vec
    return vec / norm


def default_stub_generate(prompt: str) -> str:
    """Offline generation stand-in: deterministic text keyed by the prompt."""
    h = hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:8]
    if "QUESTION:" in prompt and "ANSWER:" in prompt:
        return (
            f"QUESTION: What does procedure {h} accomplish?\n"
            f"ANSWER: Procedure {h} performs the documented steps in order."
        )
    return f"Stub answer {h}."


def _extract_path(payload, path: str):
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, Mapping) and part in node:
            node = node[part]
        else:
            raise GatewayError(f"response missing field {path!r}")
    return node


def _render_body(template: str, values: Mapping[str, object]) -> dict:
    body = template
    for key, value in values.items():
        body = body.replace("{{" + key + "}}", json.dumps(value))
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise GatewayError(f"bad request template: {exc}") from exc


class ModelGateway:
    """Facade over the configured backend; safe for concurrent use."""

    def __init__(
        self,
        cfg: GatewayConfig | None = None,
        stub_generate: Mapping[str, str] | Callable[[str], str] | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.cfg = cfg or GatewayConfig()
        self._stub_generate = stub_generate
        self._transport = transport
        self._client: httpx.Client | None = None
        self._client_lock = threading.Lock()
        limit = self.cfg.max_in_flight
        self._semaphores = {
            "generate": threading.BoundedSemaphore(limit),
            "embed": threading.BoundedSemaphore(limit),
            "score": threading.BoundedSemaphore(limit),
        }

    # -- public operations ---------------------------------------------------

    def generate(self, req: GenerationRequest | str) -> str:
        if isinstance(req, str):
            req = GenerationRequest(
                prompt=req,
                max_tokens=self.cfg.max_tokens,
                temperature=self.cfg.temperature,
            )
        if self.cfg.mode == "stub":
            text = self._stub_generation(req.prompt)
        else:
            body = _render_body(
                self.cfg.generate_request_template,
                {
                    "prompt": req.prompt,
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                    "stop": list(req.stop) if req.stop else [],
                },
            )
            payload = self._post_json(self.cfg.generate_url, body, "generate")
            text = str(_extract_path(payload, self.cfg.generate_response_path))
        return _apply_stop(text, req.stop)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed requires at least one text")
        if self.cfg.mode == "stub":
            return [hash_embedding(t, self.cfg.embed_dim) for t in texts]
        body = _render_body(self.cfg.embed_request_template, {"texts": list(texts)})
        payload = self._post_json(self.cfg.embed_url, body, "embed")
        raw = _extract_path(payload, self.cfg.embed_response_path)
        vectors = [np.asarray(v, dtype=np.float64) for v in raw]
        if len(vectors) != len(texts):
            raise GatewayError(
                f"embedding count mismatch: {len(vectors)} != {len(texts)}"
            )
        dims = {v.shape for v in vectors}
        if len(dims) != 1 or vectors[0].ndim != 1:
            raise GatewayError(f"inconsistent embedding dimensions: {dims}")
        out = []
        for v in vectors:
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                raise GatewayError("embedding service returned a zero vector")
            out.append(v / norm)
        return out

    def score_sequence(
        self, source: str, target: str, prefix: str = ""
    ) -> SequenceScore:
        if not target.strip():
            raise ValueError("empty target")
        if self.cfg.mode == "stub":
            return SequenceScore(oracle_score(source, target, prefix))
        body = _render_body(
            self.cfg.score_request_template,
            {"source": source, "target": target, "prefix": prefix},
        )
        payload = self._post_json(self.cfg.score_url, body, "score")
        value = float(_extract_path(payload, self.cfg.score_response_path))
        if value > 0:
            raise GatewayError(f"scorer returned a positive value: {value}")
        return SequenceScore(value)

    @property
    def scorer(self) -> Callable[[str, str, str], float]:
        """(source, target, prefix) -> value, for the eval harness."""

        def _score(source: str, target: str, prefix: str = "") -> float:
            return self.score_sequence(source, target, prefix).value

        return _score

    # -- internals -------------------------------------------------------------

    def _stub_generation(self, prompt: str) -> str:
        stub = self._stub_generate
        if stub is None:
            return default_stub_generate(prompt)
        if callable(stub):
            return stub(prompt)
        try:
            return stub[prompt]
        except KeyError:
            raise GatewayError(f"no canned response for prompt ({len(prompt)} chars)")

    def _headers(self) -> dict[str, str]:
        headers = {}
        if self.cfg.api_key_env:
            key = os.environ.get(self.cfg.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _http(self) -> httpx.Client:
        with self._client_lock:
            if self._client is None:
                self._client = httpx.Client(
                    timeout=self.cfg.timeout, transport=self._transport
                )
            return self._client

    def _post_json(self, url: str, body: dict, endpoint: str) -> dict:
        if not url:
            raise GatewayError(f"gateway.{endpoint}_url is not configured")
        sem = self._semaphores[endpoint]
        attempts = 0
        delay = self.cfg.backoff_base
        while True:
            attempts += 1
            try:
                with sem:
                    resp = self._http().post(url, json=body, headers=self._headers())
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise _TransientError(f"status {resp.status_code}")
                if resp.status_code >= 400:
                    raise GatewayError(
                        f"{endpoint} failed with status {resp.status_code}", attempts
                    )
                return resp.json()
            except (httpx.TransportError, _TransientError) as exc:
                if attempts >= self.cfg.retry_attempts:
                    raise GatewayError(
                        f"{endpoint} failed after {attempts} attempts: {exc}", attempts
                    ) from exc
                time.sleep(delay)
                delay *= 2


def _apply_stop(text: str, stop: tuple[str, ...] | None) -> str:
    if not stop:
        return text
    cut = len(text)
    for marker in stop:
        pos = text.find(marker)
        if pos != -1:
            cut = min(cut, pos)
    return text[:cut]


@dataclass
class CapturingStub:
    """Stub generation callable that records every prompt it was asked to
    complete; used by leak tests to inspect exactly what would reach a model."""

    reply: Callable[[str], str] | None = None
    prompts: list[str] = field(default_factory=list)

    def __call__(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if self.reply is not None:
            return self.reply(prompt)
        return default_stub_generate(prompt)
