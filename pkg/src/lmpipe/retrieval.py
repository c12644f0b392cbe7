"""In-memory lexical retrieval over a small bundled corpus.

BM25 (k1=1.5, b=0.75) over lowercase alphanumeric tokens. Deterministic:
scores are non-increasing and ties break by insertion order, so equal
(index, query, k) always give equal ranked lists.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BM25_K1 = 1.5
BM25_B = 0.75

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    title: str
    text: str


@dataclass
class RetrieverIndex:
    passages: list[Passage]
    _doc_tokens: list[list[str]] = field(default_factory=list, repr=False)
    _doc_freq: dict[str, int] = field(default_factory=dict, repr=False)
    _avg_len: float = 0.0

    def __deepcopy__(self, memo):  # read-only after build; programs share one index
        return self

    @classmethod
    def build(cls, passages: Iterable[Passage]) -> "RetrieverIndex":
        passages = list(passages)
        titles = [p.title for p in passages]
        if len(set(titles)) != len(titles):
            dupe = next(t for t in titles if titles.count(t) > 1)
            raise ValueError(f"duplicate passage title {dupe!r}")
        index = cls(passages=passages)
        for passage in passages:
            tokens = tokenize(passage.title + " " + passage.text)
            index._doc_tokens.append(tokens)
            for term in set(tokens):
                index._doc_freq[term] = index._doc_freq.get(term, 0) + 1
        total = sum(len(toks) for toks in index._doc_tokens)
        index._avg_len = total / len(passages) if passages else 0.0
        return index

    def __len__(self) -> int:
        return len(self.passages)

    def score(self, query: str, doc_index: int) -> float:
        tokens = self._doc_tokens[doc_index]
        doc_len = len(tokens)
        n_docs = len(self.passages)
        score = 0.0
        for term in tokenize(query):
            df = self._doc_freq.get(term, 0)
            if df == 0:
                continue
            tf = tokens.count(term)
            if tf == 0:
                continue
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * doc_len / self._avg_len)
            score += idf * tf * (BM25_K1 + 1.0) / denom
        return score


def retrieve(index: RetrieverIndex, query: str, k: int) -> list[Passage]:
    """Top-k passages by BM25 score; for an empty or unseen query, the first k
    passages in insertion order (everything scores zero and ties keep order)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.passages:
        raise ValueError("retriever index is empty")
    scored = [(index.score(query, i), i) for i in range(len(index.passages))]
    # sort by descending score, ascending insertion index on ties
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [index.passages[i] for _, i in scored[:k]]


def deduplicate(passages: Sequence[Passage]) -> list[Passage]:
    """Drop exact-text duplicates, keeping first occurrences."""
    seen: set[tuple[str, str]] = set()
    unique = []
    for passage in passages:
        key = (passage.title, passage.text)
        if key not in seen:
            seen.add(key)
            unique.append(passage)
    return unique


def load_corpus(path: str | Path) -> list[Passage]:
    """Read one JSON record per line with fields {title, text}."""
    passages = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                passages.append(Passage(title=record["title"], text=record["text"]))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"bad corpus record at {path}:{lineno}: {exc}") from exc
    return passages
