import random

import numpy as np
import pytest

from scicorpus.corpus import Document
from scicorpus.dedup import (
    EMPTY_SENTINEL,
    N_BANDS,
    N_HASHES,
    N_ROWS,
    MinHashSignature,
    ShingleSet,
    dedup,
    is_candidate_pair,
    jaccard,
    load_signatures,
    lsh_candidates,
    minhash_signature,
    save_signatures,
    shingle,
)
from scicorpus.errors import ConfigurationError


# -- independent oracles ------------------------------------------------------

def word_ngrams(text: str, n: int) -> set:
    toks = text.split()
    if not toks:
        return set()
    if len(toks) < n:
        return {" ".join(toks)}
    return {" ".join(toks[i : i + n]) for i in range(len(toks) - n + 1)}


def exact_jaccard(a: str, b: str, n: int = 5) -> float:
    sa, sb = word_ngrams(a, n), word_ngrams(b, n)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def synthetic_pair(rng: np.random.Generator, common: int, unique_each: int):
    """Two shingle sets with exact Jaccard common / (common + 2*unique_each)."""
    vals = rng.integers(0, 1 << 62, size=common + 2 * unique_each, dtype=np.uint64)
    shared = vals[:common]
    a = frozenset(int(v) for v in np.concatenate([shared, vals[common : common + unique_each]]))
    b = frozenset(int(v) for v in np.concatenate([shared, vals[common + unique_each :]]))
    return ShingleSet("a", a), ShingleSet("b", b)


class TestShingle:
    def test_empty_text(self):
        assert shingle("", 5).shingles == frozenset()

    def test_two_tokens_window_two(self):
        s = shingle("a b c", 2)
        assert len(s.shingles) == 2

    def test_short_text_single_shingle(self):
        s = shingle("a b c", 5)
        assert len(s.shingles) == 1

    def test_set_semantics(self):
        s = shingle("x y x y x y", 2)
        # windows: "x y", "y x", "x y", "y x", "x y" -> 2 distinct
        assert len(s.shingles) == 2

    def test_one_word_edit_in_100(self):
        words = [f"tok{i}" for i in range(100)]
        a = " ".join(words)
        edited = list(words)
        edited[50] = "CHANGED"
        b = " ".join(edited)
        oracle = exact_jaccard(a, b, 5)
        assert oracle == pytest.approx(91 / 101)
        assert 0.90 <= oracle <= 0.96
        got = jaccard(shingle(a, 5), shingle(b, 5))
        assert got == pytest.approx(oracle)

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            shingle("a", 0)


class TestMinHashSignature:
    def test_identical_sets_identical_signatures(self):
        s1 = shingle("alpha beta gamma delta epsilon zeta", 3, "a")
        s2 = shingle("alpha beta gamma delta epsilon zeta", 3, "b")
        assert np.array_equal(minhash_signature(s1).values, minhash_signature(s2).values)

    def test_length_and_layout(self):
        sig = minhash_signature(shingle("one two three four five six seven", 3))
        assert sig.values.shape == (N_HASHES,)
        assert sig.bands().shape == (N_BANDS, N_ROWS)
        assert N_HASHES == 112 and N_BANDS == 14 and N_ROWS == 8

    def test_empty_set_sentinel(self):
        sig = minhash_signature(ShingleSet("e", frozenset()))
        assert bool(np.all(sig.values == EMPTY_SENTINEL))

    def test_match_fraction_within_binomial_bounds_at_half(self):
        # J=0.5: matching positions ~ Binomial(112, 0.5); [42, 70] is ±2.65
        # sigma, so nearly all of 1,000 pairs land inside.
        rng = np.random.default_rng(42)
        inside = 0
        for _ in range(1000):
            a, b = synthetic_pair(rng, common=100, unique_each=50)
            matches = int(
                (minhash_signature(a).values == minhash_signature(b).values).sum()
            )
            if 42 <= matches <= 70:
                inside += 1
        assert inside >= 985

    def test_unbiased_jaccard_estimator(self):
        # mean |match_fraction - exact J| < 0.06 over 1,000 random pairs
        rng = np.random.default_rng(7)
        errors = []
        for _ in range(1000):
            common = int(rng.integers(1, 20)) * 10
            unique = int(rng.integers(0, 10)) * 10
            a, b = synthetic_pair(rng, common=common, unique_each=unique)
            true_j = jaccard(a, b)
            frac = float(
                (minhash_signature(a).values == minhash_signature(b).values).mean()
            )
            errors.append(abs(frac - true_j))
        assert float(np.mean(errors)) < 0.06


def lsh_curve(s: float) -> float:
    return 1.0 - (1.0 - s**N_ROWS) ** N_BANDS


class TestLshCandidates:
    def test_identical_documents_always_candidates(self):
        text = " ".join(f"w{i}" for i in range(60))
        sigs = [
            minhash_signature(shingle(text, 5, "a")),
            minhash_signature(shingle(text, 5, "b")),
        ]
        assert lsh_candidates(sigs) == {("a", "b")}

    def test_disjoint_sets_not_candidates(self):
        a = minhash_signature(shingle(" ".join(f"a{i}" for i in range(60)), 5, "a"))
        b = minhash_signature(shingle(" ".join(f"b{i}" for i in range(60)), 5, "b"))
        assert lsh_candidates([a, b]) == set()

    def test_layout_mismatch_rejected(self):
        bad = MinHashSignature("x", np.zeros(16, dtype=np.uint64))
        with pytest.raises(ConfigurationError):
            lsh_candidates([bad])

    def test_empty_documents_treated_unique(self):
        sigs = [
            minhash_signature(ShingleSet("e1", frozenset())),
            minhash_signature(ShingleSet("e2", frozenset())),
        ]
        assert lsh_candidates(sigs) == set()

    @pytest.mark.parametrize(
        "num,den,scale",
        [(2, 10, 10), (5, 10, 10), (8, 10, 10), (19, 20, 10)],
    )
    def test_s_curve(self, num, den, scale):
        s = num / den
        analytic = lsh_curve(s)
        rng = np.random.default_rng(num * 1000 + den)
        hits = 0
        trials = 500
        unique_each = (den - num) * scale // 2
        for _ in range(trials):
            a, b = synthetic_pair(rng, common=num * scale, unique_each=unique_each)
            if is_candidate_pair(minhash_signature(a), minhash_signature(b)):
                hits += 1
        assert abs(hits / trials - analytic) <= 0.05


# -- end-to-end dedup ---------------------------------------------------------

def build_planted_corpus(n_docs=100, n_dups=20, words_per_doc=150, seed=11):
    """n_docs documents, with n_dups near-copies (one-word edits) planted.
    Returns the doc list and the expected removed count."""
    rng = random.Random(seed)
    base_count = n_docs - n_dups
    docs = []
    for b in range(base_count):
        words = [f"d{b}w{i}x{rng.randint(0, 9)}" for i in range(words_per_doc)]
        docs.append(Document(id=f"doc{b:03d}", text=" ".join(words)))
    for k in range(n_dups):
        src = docs[k]
        words = src.text.split()
        words[words_per_doc // 2] = f"EDIT{k}"
        docs.append(Document(id=f"dup{k:03d}", text=" ".join(words)))
    rng.shuffle(docs)
    return docs


def brute_force_kept(docs, threshold=0.8, n=5) -> set:
    """All-pairs exact-Jaccard clustering with the same keep policy."""
    ids = [d.id for d in docs]
    by_id = {d.id: d for d in docs}
    parent = {i: i for i in ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    grams = {d.id: word_ngrams(d.text, n) for d in docs}
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = grams[ids[i]], grams[ids[j]]
            if not a and not b:
                continue
            if len(a & b) / len(a | b) >= threshold:
                ra, rb = find(ids[i]), find(ids[j])
                if ra != rb:
                    parent[rb] = ra
    clusters = {}
    for x in ids:
        clusters.setdefault(find(x), set()).add(x)
    kept = set()
    for members in clusters.values():
        kept.add(min(members, key=lambda m: (-by_id[m].byte_len, m)))
    return kept


class TestDedup:
    def test_exact_duplicate_removed(self):
        text = " ".join(f"w{i}" for i in range(80))
        other = " ".join(f"z{i}" for i in range(80))
        docs = [
            Document(id="A", text=text),
            Document(id="A2", text=text),
            Document(id="B", text=other),
        ]
        kept, removed, report, clusters = dedup(docs)
        assert report.input == 3
        assert report.removed == 1
        assert report.removal_rate == pytest.approx(1 / 3)
        assert {d.id for d in kept} == {"A", "B"}  # tie broken by smaller id
        assert removed[0].drop_reason == "duplicate"
        assert len(clusters) == 1 and clusters[0].members == frozenset({"A", "A2"})

    def test_all_unique_nothing_removed(self):
        docs = [
            Document(id=f"u{i}", text=" ".join(f"u{i}w{j}" for j in range(60)))
            for i in range(10)
        ]
        _kept, _removed, report, _ = dedup(docs)
        assert report.removed == 0

    def test_planted_fixture_matches_oracle(self):
        docs = build_planted_corpus()
        kept, _removed, report, _ = dedup(docs)
        assert report.input == 100
        assert report.removed == 20
        assert report.removal_rate == pytest.approx(0.20)
        assert {d.id for d in kept} == brute_force_kept(docs)

    def test_order_insensitive_clusters(self):
        docs = build_planted_corpus(n_docs=30, n_dups=8, seed=3)
        _, _, _, clusters_a = dedup(docs)
        shuffled = list(docs)
        random.Random(99).shuffle(shuffled)
        _, _, _, clusters_b = dedup(shuffled)
        assert {c.members for c in clusters_a} == {c.members for c in clusters_b}

    def test_keep_longest(self):
        long_text = " ".join(f"w{i}" for i in range(100))
        short_text = " ".join(f"w{i}" for i in range(100 - 2))  # high overlap, shorter
        docs = [Document(id="short", text=short_text), Document(id="long", text=long_text)]
        kept, _, report, _ = dedup(docs, verify_threshold=0.8)
        assert report.removed == 1
        assert kept[0].id == "long" or {d.id for d in kept} == {"long"}


class TestSignatureCache:
    def test_round_trip(self, tmp_path):
        sigs = [
            minhash_signature(shingle(" ".join(f"c{i}w{j}" for j in range(40)), 5, f"doc{i}"))
            for i in range(5)
        ]
        path = str(tmp_path / "sigs.bin")
        assert save_signatures(path, sigs) == 5
        loaded = load_signatures(path)
        assert [s.doc_id for s in loaded] == [s.doc_id for s in sigs]
        for a, b in zip(sigs, loaded):
            assert np.array_equal(a.values, b.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "not_a_cache.bin"
        path.write_bytes(b"nope")
        with pytest.raises(ConfigurationError):
            load_signatures(str(path))
