"""Plain key=value configuration for the service and CLI.

Example file:

    corpus_dir = corpus
    index_dir = index
    users_file = users.conf
    retrieval.top_n = 10
    gateway.mode = stub
    gateway.embed_dim = 64

Dotted keys fill the gateway and retrieval sections. The ASSISTANT_CONFIG
environment variable names the file when no path is given explicitly.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from raftkit.gateway import GatewayConfig
from raftkit.prompts import DEFAULT_PROMPT_CHAR_CAP
from raftkit.retrieval import RetrievalConfig

CONFIG_ENV_VAR = "ASSISTANT_CONFIG"


@dataclass(frozen=True)
class AssistantConfig:
    corpus_dir: Path = Path("corpus")
    index_dir: Path = Path("index")
    users_file: Path | None = None
    prompt_char_cap: int = DEFAULT_PROMPT_CHAR_CAP
    host: str = "127.0.0.1"
    port: int = 8080
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)


_TOP_LEVEL = {
    "corpus_dir": Path,
    "index_dir": Path,
    "users_file": Path,
    "prompt_char_cap": int,
    "host": str,
    "port": int,
}


def _section_types(cls) -> dict[str, type]:
    # every field in these config dataclasses carries a scalar default, so
    # the default's type is the coercion target
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


_GATEWAY_TYPES = _section_types(GatewayConfig)
_RETRIEVAL_TYPES = _section_types(RetrievalConfig)


def _coerce(raw: str, target: type, key: str):
    try:
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return target(raw)
    except ValueError as exc:
        raise ValueError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> AssistantConfig:
    top: dict[str, object] = {}
    gateway: dict[str, object] = {}
    retrieval: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key.startswith("gateway."):
            name = key[len("gateway.") :]
            if name not in _GATEWAY_TYPES:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            gateway[name] = _coerce(raw, _GATEWAY_TYPES[name], key)
        elif key.startswith("retrieval."):
            name = key[len("retrieval.") :]
            if name not in _RETRIEVAL_TYPES:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            retrieval[name] = _coerce(raw, _RETRIEVAL_TYPES[name], key)
        elif key in _TOP_LEVEL:
            top[key] = _coerce(raw, _TOP_LEVEL[key], key)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return AssistantConfig(
        gateway=GatewayConfig(**gateway),
        retrieval=RetrievalConfig(**retrieval),
        **top,
    )


def load_config(path: str | Path | None = None) -> AssistantConfig:
    """Read configuration from `path`, else from $ASSISTANT_CONFIG, else
    defaults."""
    if path is None:
        env = os.environ.get(CONFIG_ENV_VAR, "")
        if not env:
            return AssistantConfig()
        path = env
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def parse_users_text(text: str) -> dict[str, frozenset[str]]:
    """One `user_id: group,group,...` record per line. A user listed with no
    groups is public-only, same as an unknown user."""
    users: dict[str, frozenset[str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if ":" not in stripped:
            raise ValueError(f"line {lineno}: expected user_id: groups")
        user_id, _, raw = stripped.partition(":")
        user_id = user_id.strip()
        if not user_id:
            raise ValueError(f"line {lineno}: empty user_id")
        if user_id in users:
            raise ValueError(f"line {lineno}: duplicate user {user_id!r}")
        groups = frozenset(g.strip() for g in raw.split(",") if g.strip())
        users[user_id] = groups
    return users


def load_users(path: str | Path | None) -> dict[str, frozenset[str]]:
    if path is None:
        return {}
    return parse_users_text(Path(path).read_text(encoding="utf-8"))
