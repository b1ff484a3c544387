import random
import string

import pytest
from hypothesis import HealthCheck, settings

from raftkit.corpus import Chunk
from raftkit.gateway import ModelGateway

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

WORDS = (
    "clock signal timing slack setup hold register path delay corner "
    "synthesis placement routing congestion buffer cell library voltage "
    "command option flag report constraint violation margin netlist pin "
    "power leakage frequency period skew latency jitter flow script run"
).split()


def make_chunk(
    i: int,
    text: str,
    groups: frozenset[str] = frozenset(),
    doc_id: str | None = None,
    category: str = "Other",
) -> Chunk:
    return Chunk(
        chunk_id=f"k{i:05d}",
        doc_id=doc_id or f"d{i:05d}",
        seq=0,
        start=0,
        end=len(text),
        text=text,
        category=category,
        access_groups=groups,
    )


def random_text(rng: random.Random, lo: int = 3, hi: int = 30) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def random_groups(rng: random.Random, pool: list[str], p_public: float = 0.4) -> frozenset[str]:
    if rng.random() < p_public:
        return frozenset()
    return frozenset(rng.sample(pool, rng.randint(1, min(3, len(pool)))))


@pytest.fixture
def stub_gateway() -> ModelGateway:
    return ModelGateway()


def random_sentence(rng: random.Random, lo: int = 1, hi: int = 12) -> str:
    words = []
    for _ in range(rng.randint(lo, hi)):
        n = rng.randint(1, 8)
        words.append("".join(rng.choice(string.ascii_lowercase) for _ in range(n)))
    return " ".join(words)
