"""Benchmark decontamination by exact token n-gram matching (default n=20).

Each benchmark sample contributes the n-grams of its concatenated
problem+solution token sequence; a corpus document is contaminated when any
window of its own token sequence hits the index. Tokens are whitespace
words after normalization, case-sensitive: "exact" matching means exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Document, normalize

DEFAULT_NGRAM = 20
DROP_CONTAMINATED = "contaminated"


def _gram_key(tokens: Sequence[str]) -> bytes:
    # 128-bit digest: no raw grams stored, collisions negligible.
    return hashlib.blake2b(" ".join(tokens).encode("utf-8"), digest_size=16).digest()


def sample_tokens(problem: str, solution: str) -> list[str]:
    return normalize(problem).split() + normalize(solution).split()


@dataclass
class NGramIndex:
    n: int = DEFAULT_NGRAM
    sample_count: int = 0
    # gram length -> set of 128-bit digests; lengths shorter than n appear
    # when a whole sample is shorter than n tokens.
    grams: dict[int, set[bytes]] = field(default_factory=dict)

    def add_sequence(self, tokens: Sequence[str]) -> None:
        if not tokens:
            return
        if len(tokens) < self.n:
            self.grams.setdefault(len(tokens), set()).add(_gram_key(tokens))
            return
        bucket = self.grams.setdefault(self.n, set())
        for i in range(len(tokens) - self.n + 1):
            bucket.add(_gram_key(tokens[i : i + self.n]))

    def gram_count(self) -> int:
        return sum(len(s) for s in self.grams.values())

    def save(self, path: str) -> None:
        data = {
            "version": 1,
            "n": self.n,
            "sample_count": self.sample_count,
            "grams": {str(k): sorted(g.hex() for g in v) for k, v in self.grams.items()},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f)

    @classmethod
    def load(cls, path: str) -> "NGramIndex":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        idx = cls(n=data["n"], sample_count=data["sample_count"])
        idx.grams = {int(k): {bytes.fromhex(h) for h in v} for k, v in data["grams"].items()}
        return idx


def build_index(samples: Iterable[dict], n: int = DEFAULT_NGRAM) -> NGramIndex:
    """Index benchmark records with fields {problem, solution}.

    Samples shorter than n tokens are indexed whole, so very short benchmark
    items still catch verbatim inclusion.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = NGramIndex(n=n)
    for rec in samples:
        tokens = sample_tokens(rec.get("problem", ""), rec.get("solution", ""))
        if tokens:
            idx.add_sequence(tokens)
            idx.sample_count += 1
    return idx


def is_contaminated(doc: Document | str, idx: NGramIndex) -> bool:
    """True iff any window of the document's token sequence is indexed."""
    text = doc.text if isinstance(doc, Document) else doc
    tokens = text.split()
    for length, bucket in idx.grams.items():
        if len(tokens) < length:
            continue
        for i in range(len(tokens) - length + 1):
            if _gram_key(tokens[i : i + length]) in bucket:
                return True
    return False


@dataclass
class DecontamReport:
    input: int = 0
    removed: int = 0

    @property
    def removal_rate(self) -> float:
        return self.removed / self.input if self.input else 0.0

    def to_record(self) -> dict:
        return {
            "input": self.input,
            "removed": self.removed,
            "removal_rate": round(self.removal_rate, 6),
        }


def decontaminate(
    docs: Iterable[Document], idx: NGramIndex
) -> tuple[list[Document], list[Document], DecontamReport]:
    """Drop contaminated documents; returns (kept, dropped, report)."""
    report = DecontamReport()
    kept, dropped = [], []
    for doc in docs:
        report.input += 1
        if is_contaminated(doc, idx):
            dropped.append(doc.dropped(DROP_CONTAMINATED))
        else:
            kept.append(doc)
    report.removed = len(dropped)
    return kept, dropped, report


def read_benchmark_jsonl(path: str) -> Iterable[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)
