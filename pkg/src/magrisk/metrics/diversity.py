"""Response similarity, diversity entropy and stance disagreement."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from magrisk.core.events import MessageKind, Trace

Embedder = Callable[[str], Sequence[float]]

_TOKEN = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Token-frequency vectors with tokens hashed into a fixed number of buckets."""

    def __init__(self, dim: int = 4096):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def bucket(self, token: str) -> int:
        return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big") % self.dim

    def __call__(self, text: str) -> list[float]:
        vec = [0.0] * self.dim
        for tok in _TOKEN.findall(text.lower()):
            vec[self.bucket(tok)] += 1.0
        return vec


DEFAULT_EMBEDDER = HashingEmbedder()


@dataclass(frozen=True)
class ResponseItem:
    agent: str
    content: str
    vector: tuple[float, ...]


@dataclass(frozen=True)
class ResponseSet:
    items: tuple[ResponseItem, ...]

    def __post_init__(self) -> None:
        dims = {len(i.vector) for i in self.items}
        if len(dims) > 1:
            raise ValueError(f"vectors differ in dimension: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def from_texts(cls, pairs: Iterable[tuple[str, str]], embedder: Embedder | None = None) -> ResponseSet:
        embed = embedder or DEFAULT_EMBEDDER
        return cls(tuple(ResponseItem(a, t, tuple(float(x) for x in embed(t))) for a, t in pairs))

    @classmethod
    def from_trace(
        cls,
        trace: Trace,
        kind: MessageKind | None = None,
        agents: Iterable[str] | None = None,
        embedder: Embedder | None = None,
    ) -> ResponseSet:
        """Each agent's last message (optionally of one kind), in first-speaker order."""
        wanted = set(agents) if agents is not None else None
        last: dict[str, str] = {}
        for m in trace.messages():
            if kind is not None and m.kind is not kind:
                continue
            if wanted is not None and m.sender not in wanted:
                continue
            last[m.sender] = m.content
        return cls.from_texts(last.items(), embedder)

    def matrix(self) -> np.ndarray:
        return np.array([i.vector for i in self.items], dtype=float)


@dataclass(frozen=True)
class SimilarityResult:
    agents: tuple[str, ...]
    matrix: np.ndarray
    mean_off_diagonal: float


def pairwise_similarity(rs: ResponseSet) -> SimilarityResult:
    """Cosine similarity between every pair of responses."""
    if len(rs) < 2:
        raise ValueError("need at least two responses")
    m = rs.matrix()
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        bad = [rs.items[i].agent for i in np.flatnonzero(norms == 0)]
        raise ValueError(f"zero vector for {bad}")
    unit = m / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2
    # identical directions compare as exactly 1, not 1 - ulp
    keys = [u.tobytes() for u in unit]
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if keys[i] == keys[j]:
                sim[i, j] = sim[j, i] = 1.0
    np.fill_diagonal(sim, 1.0)
    n = len(rs)
    mean = float((sim.sum() - n) / (n * (n - 1)))
    return SimilarityResult(tuple(i.agent for i in rs.items), sim, mean)


def similarity_clusters(rs: ResponseSet, threshold: float = 0.95) -> list[list[int]]:
    """Single-link clusters: connected components of the ``sim >= threshold`` graph."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    n = len(rs)
    if n == 0:
        raise ValueError("empty response set")
    if n == 1:
        return [[0]]
    sim = pairwise_similarity(rs).matrix
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if sim[i, j] >= threshold:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def response_entropy(rs: ResponseSet, threshold: float = 0.95) -> float:
    """Shannon entropy in bits of the cluster-size distribution."""
    clusters = similarity_clusters(rs, threshold)
    n = len(rs)
    h = -sum((len(c) / n) * math.log2(len(c) / n) for c in clusters)
    return max(0.0, h)


def disagreement_rate(stances: Sequence) -> float:
    """Fraction of unordered agent pairs holding different stances."""
    n = len(stances)
    if n < 2:
        raise ValueError("need at least two stances")
    same = sum(c * (c - 1) // 2 for c in Counter(stances).values())
    pairs = n * (n - 1) // 2
    return (pairs - same) / pairs
