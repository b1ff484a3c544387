"""Prompt templates and the QUESTION:/ANSWER: wire format.

Templates are versioned text files shipped with the package. The same RAFT
template renders both training prompts and live inference prompts, so a model
fine-tuned on emitted datasets sees the exact prompt shape at serving time.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from pathlib import Path
from typing import Sequence

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_NAMES = ("refine.txt", "synthesize.txt", "raft_prompt.txt")

NO_CONTEXT_BLOCK = "(no context available)"
DEFAULT_PROMPT_CHAR_CAP = 32_000


class QAParseError(ValueError):
    """Model output did not match the QUESTION:/ANSWER: format.

    The raw output is attached so failed generations can be logged verbatim.
    """

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (TEMPLATE_DIR / name).read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def template_version() -> str:
    """Hash of all template files; recorded in dataset manifests so a dataset
    can be traced to the exact prompt wording that produced it."""
    h = hashlib.sha256()
    for name in TEMPLATE_NAMES:
        h.update(name.encode("utf-8"))
        h.update(b"\x00")
        h.update((TEMPLATE_DIR / name).read_bytes())
    return h.hexdigest()[:12]


def render(template_text: str, **values: str) -> str:
    out = template_text
    for key, value in values.items():
        placeholder = "{{" + key + "}}"
        if placeholder not in out:
            raise ValueError(f"template has no placeholder {placeholder}")
        out = out.replace(placeholder, value)
    if "{{" in out:
        start = out.index("{{")
        raise ValueError(f"unresolved placeholder near: {out[start:start + 40]!r}")
    return out


def few_shot_block(questions: Sequence[str], k: int) -> str:
    """Numbered example-question block, capped at k. Empty input (or k=0)
    renders to the empty string so the synthesis prompt with and without
    examples differs by exactly this block."""
    kept = [q.strip() for q in questions[:k] if q.strip()]
    if not kept:
        return ""
    lines = ["Here are real questions engineers have asked about similar material."]
    lines += [f"{i}. {q}" for i, q in enumerate(kept, 1)]
    lines.append("Use them only as style examples; ask about this document.")
    return "\n".join(lines)


def render_refine_prompt(question: str, answer: str) -> str:
    return render(load_template("refine.txt"), question=question, answer=answer)


def render_synth_prompt(document_body: str, rafs_questions: Sequence[str], k: int) -> str:
    return render(
        load_template("synthesize.txt"),
        few_shot_block=few_shot_block(rafs_questions, k),
        document=document_body,
    )


def render_context(chunk_texts: Sequence[str]) -> str:
    if not chunk_texts:
        return NO_CONTEXT_BLOCK
    return "\n\n".join(f"[{i}] {text}" for i, text in enumerate(chunk_texts, 1))


def render_raft_prompt(
    question: str,
    chunk_texts: Sequence[str],
    char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
) -> tuple[str, int]:
    """Render the shared training/inference prompt.

    Returns (prompt, n_chunks_used). When the rendered prompt exceeds
    char_cap, lowest-ranked chunks are dropped from the tail until it fits
    (or no chunks remain).
    """
    texts = list(chunk_texts)
    template = load_template("raft_prompt.txt")
    while True:
        prompt = render(template, context=render_context(texts), question=question)
        if len(prompt) <= char_cap or not texts:
            return prompt, len(texts)
        texts.pop()


def format_qa(
    question: str,
    answer: str,
    question_delimiter: str = "QUESTION:",
    answer_delimiter: str = "ANSWER:",
) -> str:
    return f"{question_delimiter} {question}\n{answer_delimiter} {answer}"


def parse_qa(
    text: str,
    question_delimiter: str = "QUESTION:",
    answer_delimiter: str = "ANSWER:",
) -> tuple[str, str]:
    """Inverse of format_qa for any question/answer free of the delimiter
    strings. Raises QAParseError (with the raw output attached) when a
    delimiter is missing or a field is empty after trimming."""
    q_at = text.find(question_delimiter)
    if q_at < 0:
        raise QAParseError(f"missing {question_delimiter!r} in output", raw=text)
    a_at = text.find(answer_delimiter, q_at + len(question_delimiter))
    if a_at < 0:
        raise QAParseError(f"missing {answer_delimiter!r} in output", raw=text)
    question = text[q_at + len(question_delimiter) : a_at].strip()
    answer = text[a_at + len(answer_delimiter) :].strip()
    if not question:
        raise QAParseError("empty question after parsing", raw=text)
    if not answer:
        raise QAParseError("empty answer after parsing", raw=text)
    return question, answer
