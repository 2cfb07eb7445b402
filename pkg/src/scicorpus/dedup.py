"""Near-duplicate removal: word-shingle MinHash signatures (112 hashes laid
out as 14 bands x 8 rows), LSH candidate generation, exact-Jaccard
verification, and union-find clustering with a deterministic keep policy.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document
from .errors import ConfigurationError

N_BANDS = 14
N_ROWS = 8
N_HASHES = N_BANDS * N_ROWS  # 112

DEFAULT_SHINGLE_SIZE = 5
DEFAULT_VERIFY_THRESHOLD = 0.8

# Sentinel signature value for empty shingle sets: such documents collide
# only with other empty documents, which are handled as unique.
EMPTY_SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)

# Fixed seed material so signatures are reproducible across runs and machines.
_SEED = 0x5C1C09B5
_rng = np.random.default_rng(_SEED)
_A = _rng.integers(1, 1 << 62, size=N_HASHES, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
_B = _rng.integers(0, 1 << 62, size=N_HASHES, dtype=np.uint64)


@dataclass
class ShingleSet:
    doc_id: str
    shingles: frozenset[int]


@dataclass
class MinHashSignature:
    doc_id: str
    values: np.ndarray  # shape (112,), uint64

    def bands(self) -> np.ndarray:
        return self.values.reshape(N_BANDS, N_ROWS)


@dataclass
class DuplicateCluster:
    members: frozenset[str]
    kept: str


@dataclass
class DedupReport:
    input: int = 0
    removed: int = 0
    clusters: int = 0
    candidate_pairs: int = 0
    verified_pairs: int = 0

    @property
    def removal_rate(self) -> float:
        return self.removed / self.input if self.input else 0.0

    def to_record(self) -> dict:
        return {
            "input": self.input,
            "removed": self.removed,
            "removal_rate": round(self.removal_rate, 6),
            "clusters": self.clusters,
            "candidate_pairs": self.candidate_pairs,
            "verified_pairs": self.verified_pairs,
        }


def _hash_tokens(tokens: Sequence[str]) -> int:
    digest = hashlib.blake2b(" ".join(tokens).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def shingle(text: str, n: int = DEFAULT_SHINGLE_SIZE, doc_id: str = "") -> ShingleSet:
    """Hash every run of n consecutive word tokens. Texts shorter than n
    words yield a single shingle over all their tokens; empty text yields
    the empty set."""
    if n < 1:
        raise ValueError("shingle size must be >= 1")
    tokens = text.split()
    if not tokens:
        return ShingleSet(doc_id=doc_id, shingles=frozenset())
    if len(tokens) < n:
        return ShingleSet(doc_id=doc_id, shingles=frozenset({_hash_tokens(tokens)}))
    grams = {_hash_tokens(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}
    return ShingleSet(doc_id=doc_id, shingles=frozenset(grams))


def jaccard(a: ShingleSet | frozenset, b: ShingleSet | frozenset) -> float:
    sa = a.shingles if isinstance(a, ShingleSet) else a
    sb = b.shingles if isinstance(b, ShingleSet) else b
    if not sa and not sb:
        return 1.0
    union = len(sa | sb)
    return len(sa & sb) / union if union else 0.0


def minhash_signature(shingles: ShingleSet) -> MinHashSignature:
    """112 multiply-shift min-hashes of the shingle set; deterministic given
    the module's fixed seeds."""
    if not shingles.shingles:
        values = np.full(N_HASHES, EMPTY_SENTINEL, dtype=np.uint64)
        return MinHashSignature(doc_id=shingles.doc_id, values=values)
    vals = np.fromiter(shingles.shingles, dtype=np.uint64, count=len(shingles.shingles))
    with np.errstate(over="ignore"):
        hashed = _A[:, None] * vals[None, :] + _B[:, None]
    return MinHashSignature(doc_id=shingles.doc_id, values=hashed.min(axis=1))


def is_candidate_pair(a: MinHashSignature, b: MinHashSignature) -> bool:
    """True iff at least one of the 14 bands agrees on all 8 rows."""
    return bool(np.any(np.all(a.bands() == b.bands(), axis=1)))


def lsh_candidates(signatures: Iterable[MinHashSignature]) -> set[tuple[str, str]]:
    """Candidate pairs: documents sharing at least one identical band.

    A pair at shingle-Jaccard s becomes a candidate with probability
    1 - (1 - s^8)^14.
    """
    buckets: dict[tuple[int, bytes], list[str]] = {}
    for sig in signatures:
        if sig.values.shape != (N_HASHES,):
            raise ConfigurationError(
                f"signature for {sig.doc_id!r} has {sig.values.shape} values, expected ({N_HASHES},)"
            )
        if bool(np.all(sig.values == EMPTY_SENTINEL)):
            continue  # empty documents are treated as unique
        bands = sig.bands()
        for band_idx in range(N_BANDS):
            key = (band_idx, bands[band_idx].tobytes())
            buckets.setdefault(key, []).append(sig.doc_id)
    pairs: set[tuple[str, str]] = set()
    for ids in buckets.values():
        if len(ids) < 2:
            continue
        ids = sorted(set(ids))
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                pairs.add((ids[i], ids[j]))
    return pairs


class UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Deterministic: smaller id becomes the root.
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def groups(self) -> list[frozenset[str]]:
        by_root: dict[str, set[str]] = {}
        for x in self.parent:
            by_root.setdefault(self.find(x), set()).add(x)
        return [frozenset(g) for g in by_root.values() if len(g) >= 2]


def cluster_duplicates(
    pairs: Iterable[tuple[str, str]], doc_order_key
) -> list[DuplicateCluster]:
    """Transitive closure of verified pairs; one member kept per cluster.

    `doc_order_key(doc_id)` must sort the preferred keeper first.
    """
    uf = UnionFind()
    for a, b in pairs:
        uf.union(a, b)
    clusters = []
    for group in uf.groups():
        kept = min(group, key=doc_order_key)
        clusters.append(DuplicateCluster(members=group, kept=kept))
    clusters.sort(key=lambda c: c.kept)
    return clusters


def dedup(
    docs: Iterable[Document],
    verify_threshold: float = DEFAULT_VERIFY_THRESHOLD,
    shingle_size: int = DEFAULT_SHINGLE_SIZE,
) -> tuple[list[Document], list[Document], DedupReport, list[DuplicateCluster]]:
    """Remove near-duplicates from a document stream.

    LSH candidates are verified by exact shingle-Jaccard >= threshold before
    clustering; within a cluster the longest document is kept (ties broken by
    smallest id). Returns (kept, removed, report, clusters).
    """
    docs = list(docs)
    report = DedupReport(input=len(docs))
    by_id = {d.id: d for d in docs}
    if len(by_id) != len(docs):
        raise ValueError("duplicate document ids in dedup input")

    shingle_sets = {d.id: shingle(d.text, n=shingle_size, doc_id=d.id) for d in docs}
    signatures = [minhash_signature(s) for s in shingle_sets.values()]
    candidates = lsh_candidates(signatures)
    report.candidate_pairs = len(candidates)

    verified = [
        (a, b)
        for a, b in candidates
        if jaccard(shingle_sets[a], shingle_sets[b]) >= verify_threshold
    ]
    report.verified_pairs = len(verified)

    # Keep policy: longest text first, then smallest id.
    def keep_key(doc_id: str):
        return (-by_id[doc_id].byte_len, doc_id)

    clusters = cluster_duplicates(verified, keep_key)
    report.clusters = len(clusters)

    drop_ids = {m for c in clusters for m in c.members if m != c.kept}
    report.removed = len(drop_ids)
    kept = [d for d in docs if d.id not in drop_ids]
    removed = [by_id[i].dropped("duplicate") for i in sorted(drop_ids)]
    return kept, removed, report, clusters


# ---------------------------------------------------------------------------
# Signature cache: doc_id plus 112 little-endian uint64 values per record,
# enabling resumable dedup runs.
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"SCMH"


def save_signatures(path: str, signatures: Iterable[MinHashSignature]) -> int:
    n = 0
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        for sig in signatures:
            raw_id = sig.doc_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw_id)))
            f.write(raw_id)
            f.write(sig.values.astype("<u8").tobytes())
            n += 1
    return n


def load_signatures(path: str) -> list[MinHashSignature]:
    out = []
    with open(path, "rb") as f:
        if f.read(4) != _CACHE_MAGIC:
            raise ConfigurationError(f"{path} is not a signature cache file")
        while True:
            head = f.read(4)
            if not head:
                break
            (id_len,) = struct.unpack("<I", head)
            doc_id = f.read(id_len).decode("utf-8")
            values = np.frombuffer(f.read(8 * N_HASHES), dtype="<u8").astype(np.uint64)
            if values.shape != (N_HASHES,):
                raise ConfigurationError(f"truncated signature cache: {path}")
            out.append(MinHashSignature(doc_id=doc_id, values=values))
    return out
