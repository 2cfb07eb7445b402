"""Acceptance suite: one test per criterion, each enforcing its stated
tolerance and runtime budget. The conftest hook prints one line per
criterion at the end of the run."""

import json
import random
import socket
import time

import numpy as np
import pytest

from fixtures import FRENCH_SAMPLE, english_doc, scripted_clients
from scicorpus.benchgen import build_benchmark
from scicorpus.config import PipelineConfig, StageConfig
from scicorpus.corpus import Document, Stage, portrait
from scicorpus.decontam import build_index, is_contaminated, sample_tokens
from scicorpus.dedup import dedup, is_candidate_pair, minhash_signature
from scicorpus.filters import (
    RuleConfig,
    default_discipline_map,
    garbled_filter,
    size_filter,
)
from scicorpus.llm_stages import (
    UNIT_CHARS,
    UNIT_TOKENS,
    VERDICT_FAILED_REQUEUE,
    VERDICT_SUCCESS,
    chunk_document,
    run_stage,
)
from scicorpus.model_client import MockChatClient
from scicorpus.orchestrator import SimConfig, run_simulation
from scicorpus.pipeline import run_pipeline
from test_decontam import oracle_contaminated, sample
from test_dedup import brute_force_kept, build_planted_corpus, synthetic_pair
from test_filters import expected_mapping
from test_llm_stages import failing_refine_client, twenty_paragraph_doc


@pytest.mark.criterion(1, "LSH S-curve fidelity at (14, 8) banding")
def test_criterion_01_lsh_s_curve():
    start = time.monotonic()
    for num, den, scale in [(2, 10, 10), (5, 10, 10), (8, 10, 10), (19, 20, 10)]:
        s = num / den
        analytic = 1.0 - (1.0 - s**8) ** 14
        rng = np.random.default_rng(seed=num * 7919 + den)
        hits = 0
        trials = 500
        for _ in range(trials):
            a, b = synthetic_pair(rng, common=num * scale, unique_each=(den - num) * scale // 2)
            if is_candidate_pair(minhash_signature(a), minhash_signature(b)):
                hits += 1
        assert abs(hits / trials - analytic) <= 0.05, f"s={s}: {hits / trials} vs {analytic}"
    assert time.monotonic() - start < 30


@pytest.mark.criterion(2, "dedup removes exactly the 20 planted near-duplicates")
def test_criterion_02_dedup_planted_fixture():
    start = time.monotonic()
    docs = build_planted_corpus(n_docs=100, n_dups=20)
    kept, _removed, report, _clusters = dedup(docs)
    assert report.input == 100
    assert report.removed == 20
    assert {d.id for d in kept} == brute_force_kept(docs)
    assert time.monotonic() - start < 10


@pytest.mark.criterion(3, "rule-filter boundaries exact (8 KiB size, 50% garbled)")
def test_criterion_03_l2_boundaries():
    cfg = RuleConfig()
    assert size_filter(Document(id="a", text="x" * 8191), cfg) == "undersize"
    assert size_filter(Document(id="b", text="x" * 8192), cfg) is None
    just_over = Document(id="c", text="a" * 49 + "\x01" * 51)  # ratio 0.51
    at_half = Document(id="d", text="a" * 50 + "\x01" * 50)  # ratio 0.50
    assert garbled_filter(just_over, cfg) == "garbled"
    assert garbled_filter(at_half, cfg) is None


@pytest.mark.criterion(4, "discipline table maps all 1000 codes with zero deviations")
def test_criterion_04_fdc_table_fidelity():
    dmap = default_discipline_map()
    expected = expected_mapping()
    deviations = [
        (code, dmap.lookup(code), expected[code])
        for code in range(1000)
        if dmap.lookup(code) != expected[code]
    ]
    assert deviations == []


@pytest.mark.criterion(5, "stage QC threshold: 19/20 succeeds, 18/20 requeues")
def test_criterion_05_qc_threshold():
    doc, _ = twenty_paragraph_doc()
    ok = run_stage(doc, Stage.L4, failing_refine_client({"para04word"}))
    assert ok.cleaned_chunks == 19 and ok.total_chunks == 20
    assert ok.document_verdict == VERDICT_SUCCESS
    failed_chunk = chunk_document(doc, UNIT_CHARS, 1024)[4].text
    assert failed_chunk in ok.output_text  # retained verbatim

    bad = run_stage(doc, Stage.L4, failing_refine_client({"para04word", "para15word"}))
    assert bad.cleaned_chunks == 18
    assert bad.document_verdict == VERDICT_FAILED_REQUEUE
    other_failed = chunk_document(doc, UNIT_CHARS, 1024)[15].text
    assert failed_chunk in bad.output_text and other_failed in bad.output_text


@pytest.mark.criterion(6, "chunker reconstructs 1,000 random documents byte-exactly")
def test_criterion_06_chunker_round_trip():
    start = time.monotonic()
    rng = random.Random(0xC6)
    pieces = ["word", "τοκεν", "x" * 30, "a.b", "end.", "句", "🎓", "Dr.", "(y)", "3,14"]
    for trial in range(1000):
        n = rng.randint(0, 220)
        parts = []
        for _ in range(n):
            parts.append(rng.choice(pieces))
            roll = rng.random()
            parts.append("\n\n" if roll < 0.12 else ("\n" if roll < 0.22 else " " * rng.randint(1, 3)))
        text = "".join(parts)
        if rng.random() < 0.25:
            text = " " + text + "  "
        for unit, window in ((UNIT_CHARS, 1024), (UNIT_TOKENS, 1024)):
            chunks = chunk_document(text, unit, window)
            assert "".join(c.text for c in chunks) == text, f"trial {trial} {unit}"
    assert time.monotonic() - start < 30


@pytest.mark.criterion(7, "decontamination agrees with brute-force oracle; 19-gram overlap passes")
def test_criterion_07_decontam_oracle_equivalence():
    start = time.monotonic()
    rng = random.Random(0xD7)
    vocab = [f"v{i}" for i in range(500)]
    samples = []
    for _k in range(50):
        length = rng.randint(10, 60)
        toks = [rng.choice(vocab) for _ in range(length)]
        half = length // 2
        samples.append(sample(toks[:half], toks[half:]))

    docs = []
    planted_contaminated = set()
    nineteen_id = "doc_19_overlap"
    for d in range(200):
        doc_id = f"doc{d:03d}"
        tokens = [rng.choice(vocab) for _ in range(rng.randint(60, 200))]
        if d % 4 == 0:  # plant a verbatim 20-gram (or whole short sample)
            src = sample_tokens(samples[d % 50]["problem"], samples[d % 50]["solution"])
            window = src[:20] if len(src) >= 20 else src
            pos = rng.randint(0, len(tokens))
            tokens[pos:pos] = window
            planted_contaminated.add(doc_id)
        docs.append((doc_id, " ".join(tokens)))
    # the 19-token-overlap document: shares 19 tokens with a long sample, never 20
    long_sample = next(
        s for s in samples if len(sample_tokens(s["problem"], s["solution"])) >= 30
    )
    prefix19 = sample_tokens(long_sample["problem"], long_sample["solution"])[:19]
    docs.append((nineteen_id, " ".join(["uniq_a"] * 25 + prefix19 + ["uniq_b"] * 25)))

    idx = build_index(samples, n=20)
    disagreements = []
    for doc_id, text in docs:
        got = is_contaminated(text, idx)
        want = oracle_contaminated(text, samples, 20)
        if got != want:
            disagreements.append(doc_id)
        if doc_id in planted_contaminated:
            assert got, f"planted contamination missed in {doc_id}"
    assert disagreements == []
    assert not is_contaminated(dict(docs)[nineteen_id], idx)
    assert time.monotonic() - start < 60


def _segment_marker(segment: str) -> str:
    return segment.split()[0]  # each fixture segment starts with its marker


def _auto_mcq_reply(segment: str) -> str:
    marker = _segment_marker(segment)
    reference = " ".join(segment.split()[:8])
    return json.dumps(
        {
            "question": f"Which statement about {marker} holds?",
            "correct_option": f"{marker} correct choice",
            "reference": reference,
            **{f"incorrect_option_{i}": f"{marker} wrong {i}" for i in range(1, 7)},
        }
    )


@pytest.mark.criterion(8, "benchmark pipeline emits only valid, dual-filtered items")
def test_criterion_08_benchmark_pipeline_integrity():
    start = time.monotonic()
    # 50 single-segment documents; scripted outcomes by segment index:
    # 0-19 valid items, 20-29 "No QA", 30-37 malformed JSON, 38-42 ungrounded
    # reference, 43-46 missing field, 47-49 duplicate options.
    rng = random.Random(0xB8)
    docs = [
        Document(
            id=f"seg{i:02d}",
            text=f"marker{i:02d} " + " ".join(f"w{i}_{j}" for j in range(rng.randint(60, 200))),
            doc_type="paper",
        )
        for i in range(50)
    ]

    def generator(prompt):
        segment = prompt.split("[Provided content]:\n", 1)[1]
        i = int(_segment_marker(segment)[6:8])
        if 20 <= i <= 29:
            return "No QA"
        if 30 <= i <= 37:
            return "{this is not json"
        good = json.loads(_auto_mcq_reply(segment))
        if 38 <= i <= 42:
            good["reference"] = "text not present in the segment"
        elif 43 <= i <= 46:
            good.pop("incorrect_option_3")
        elif 47 <= i <= 49:
            good["incorrect_option_2"] = good["correct_option"]
        return json.dumps(good)

    # completeness judge fails markers 00-02; correctness judge fails 03-04
    def completeness(prompt):
        fails = any(f"marker{i:02d} correct" in prompt for i in range(3))
        return json.dumps({"is_valid": not fails, "overall_assessment": "scripted"})

    def correctness(prompt):
        fails = any(f"marker{i:02d} correct" in prompt for i in (3, 4))
        return json.dumps({"is_valid": not fails, "overall_assessment": "scripted"})

    items, report = build_benchmark(
        docs,
        MockChatClient(responder=generator),
        MockChatClient(responder=completeness),
        MockChatClient(responder=correctness),
        window=4096,
    )
    assert report.segments == 50
    assert report.no_qa == 10
    assert report.generation_failures == {
        "malformed": 8,
        "ungrounded_reference": 5,
        "schema": 4,
        "degenerate_options": 3,
    }
    assert report.completeness_failed == 3
    assert report.correctness_failed == 2
    assert report.emitted == len(items) == 15
    by_id = {d.id: d for d in docs}
    for item in items:
        assert len(set(item.options)) == 7
        assert item.reference in by_id[item.source_doc_id].text
    assert time.monotonic() - start < 30


@pytest.mark.criterion(9, "orchestrator safe under 1,000 randomized crash schedules")
def test_criterion_09_orchestrator_fault_tolerance():
    start = time.monotonic()
    totals = {"crashes": 0, "freezes": 0, "reclaimed": 0, "stale": 0}
    for seed in range(1000):
        result = run_simulation(SimConfig(seed=seed, n_tasks=100, n_workers=3))
        assert result.ok, (seed, result.violations)
        assert result.done + result.failed_permanent == 100
        totals["crashes"] += result.crashes
        totals["freezes"] += result.freezes
        totals["reclaimed"] += result.reclaimed
        totals["stale"] += result.stale_rejections
    # fault injection must actually have exercised the recovery paths
    assert totals["crashes"] > 500
    assert totals["reclaimed"] > 500
    assert totals["stale"] > 100
    assert time.monotonic() - start < 300


@pytest.mark.criterion(10, "hermetic end-to-end pipeline balances its ledgers with zero network")
def test_criterion_10_hermetic_end_to_end(tmp_path, monkeypatch):
    start = time.monotonic()

    def _blocked(*_args, **_kwargs):
        raise AssertionError("network access attempted during hermetic run")

    monkeypatch.setattr(socket.socket, "connect", _blocked)
    monkeypatch.setattr(socket, "create_connection", _blocked)

    rng = random.Random(0xE2E)
    docs = [english_doc(f"doc{i:02d}", rng, n_words=rng.randint(450, 650)) for i in range(42)]
    docs.append(Document(id="dup0", text=docs[0].text))
    docs.append(Document(id="dup1", text=docs[1].text))
    docs.append(Document(id="tiny0", text="way too short"))
    docs.append(Document(id="tiny1", text="also short"))
    docs.append(Document(id="french", text=FRENCH_SAMPLE * 8))
    bench_problem = " ".join(f"benchtok{i}" for i in range(12))
    bench_solution = " ".join(f"benchtok{i}" for i in range(12, 26))
    contaminated_body = english_doc("x", rng, n_words=500).text
    docs.append(
        Document(id="leaky0", text=contaminated_body + "\n\n" + bench_problem + " " + bench_solution)
    )
    docs.append(Document(id="ad", text=english_doc("y", rng, n_words=520).text))
    docs.append(english_doc("doc42", rng, n_words=520))
    assert len(docs) == 50

    from scicorpus.model_client import ScriptedClassifier, default_labels

    clients = scripted_clients(
        mcq_generator=MockChatClient(
            responder=lambda p: _auto_mcq_reply(p.split("[Provided content]:\n", 1)[1])
        ),
    )
    ad_text = next(d.text for d in docs if d.id == "ad")
    clients.classifier = ScriptedClassifier(
        by_text={ad_text: default_labels(doc_type_v1="Advertisement")},
        default=default_labels(fdc_code="535"),
    )

    cfg = PipelineConfig(
        input="unused",
        output_dir=str(tmp_path / "out"),
        stages=[
            StageConfig("dedup", {}),
            StageConfig("rule_filter", {"min_bytes": 1500}),
            StageConfig("classify", {}),
            StageConfig("refine", {}),
            StageConfig("complete", {}),
            StageConfig("decontam", {}),
            StageConfig("benchgen", {"window": 700, "output": "pool.jsonl"}),
            StageConfig("portrait", {"group_by": "discipline"}),
        ],
    )
    result = run_pipeline(
        cfg,
        clients=clients,
        docs=docs,
        benchmark_samples=[{"problem": bench_problem, "solution": bench_solution}],
    )

    for report in result.reports:
        assert report.balanced(), report.to_record()
    for prev, cur in zip(result.reports, result.reports[1:]):
        assert cur.input == prev.kept
    accounted = (
        len(result.documents)
        + sum(r.dropped for r in result.reports)
        + sum(r.failed for r in result.reports)
    )
    assert accounted == 50
    reasons = {}
    for r in result.reports:
        for k, v in r.drop_reasons.items():
            reasons[k] = reasons.get(k, 0) + v
    assert reasons["duplicate"] == 2
    assert reasons["undersize"] == 2
    assert reasons["non_target_language"] == 1
    assert reasons["contaminated"] == 1
    assert reasons["non_educational"] == 1
    bench_report = next(r for r in result.reports if r.stage == "benchgen")
    assert bench_report.extra["benchgen"]["emitted"] > 0
    assert (tmp_path / "out" / "pool.jsonl").exists()
    assert (tmp_path / "out" / "ledger.jsonl").exists()
    assert time.monotonic() - start < 120


@pytest.mark.criterion(11, "portrait reproduces the reference token share to two decimals")
def test_criterion_11_portrait_arithmetic():
    book_tokens = {
        "computer_science": 1052,
        "engineering": 2219,
        "human_social": 14843,
        "medicine": 2779,
        "biology": 844,
        "chemistry": 714,
        "mathematics": 1118,
        "physics": 469,
        "other_stem": 1112,
    }
    docs = [
        Document(id=f"b{i}", text="x", discipline=cat, token_count=tok)
        for i, (cat, tok) in enumerate(sorted(book_tokens.items()))
    ]
    report = portrait(docs, group_by="discipline")
    assert round(report.percentage("medicine"), 2) == 11.05
    total_pct = sum(100.0 * r.token_count / report.total.token_count for r in report.rows)
    assert abs(total_pct - 100.0) < 0.05
