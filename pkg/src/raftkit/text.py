"""Shared tokenizer: lowercase, split on non-alphanumerics."""

import re

# \w minus underscore, unicode-aware
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())
