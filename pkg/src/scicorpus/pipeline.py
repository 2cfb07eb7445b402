"""Stage composition: runs configured stages in order over a document
stream, emitting a mass-conservation report per stage and appending to a
processing ledger that makes completed work resumable and re-runs no-ops.

Dropped and failed documents are written next to the kept stream with their
reasons; nothing is physically deleted until an explicit compaction.
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field

from . import benchgen as bg
from . import corpus as cp
from . import decontam as dc
from . import dedup as dd
from . import filters as ft
from . import llm_stages as ls
from .config import PipelineConfig, StageConfig
from .corpus import Document, Stage, TokenizerSpec
from .errors import ConfigurationError, ScicorpusError
from .langid import TrigramDetector
from .model_client import (
    HttpChatClient,
    MockChatClient,
    ScriptedClassifier,
    default_labels,
)

log = logging.getLogger(__name__)


@dataclass
class StageReport:
    stage: str
    index: int
    input: int = 0
    kept: int = 0
    dropped: int = 0
    failed: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def balanced(self) -> bool:
        return self.input == self.kept + self.dropped + self.failed

    def to_record(self) -> dict:
        return {
            "stage": self.stage,
            "index": self.index,
            "input": self.input,
            "kept": self.kept,
            "dropped": self.dropped,
            "failed": self.failed,
            "drop_reasons": dict(self.drop_reasons),
            "extra": self.extra,
        }


@dataclass
class PipelineClients:
    """Model-backed collaborators for the stages that need them."""

    classifier: object | None = None
    book_paper: object | None = None
    refine: object | None = None
    complete: object | None = None
    mcq_generator: object | None = None
    mcq_completeness: object | None = None
    mcq_correctness: object | None = None
    detector: object | None = None


class StageFailure(ScicorpusError):
    """A stage could not run to completion."""


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

class Ledger:
    """Append-only JSONL processing ledger.

    Stage completions key on (index, stage); document-level completions key
    on (doc_id, stage) and duplicates are rejected, which is what makes
    at-least-once task delivery safe downstream.
    """

    def __init__(self, path: str):
        self.path = path
        self.stage_done: dict[tuple[int, str], dict] = {}
        self.doc_done: set[tuple[str, str]] = set()
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    event = json.loads(line)
                    self._absorb(event)

    def _absorb(self, event: dict) -> None:
        if event.get("event") == "stage_complete":
            self.stage_done[(event["index"], event["stage"])] = event
        elif event.get("event") == "doc_stage":
            self.doc_done.add((event["doc_id"], event["stage"]))

    def _append(self, event: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, ensure_ascii=False) + "\n")

    def record_stage(self, report: StageReport, output_path: str) -> None:
        event = {
            "event": "stage_complete",
            "index": report.index,
            "stage": report.stage,
            "output": output_path,
            "report": report.to_record(),
        }
        self._append(event)
        self._absorb(event)

    def record_doc(self, doc_id: str, stage: str, verdict: str) -> bool:
        """Returns False (and writes nothing) for a duplicate completion."""
        key = (doc_id, stage)
        if key in self.doc_done:
            return False
        self._append({"event": "doc_stage", "doc_id": doc_id, "stage": stage, "verdict": verdict})
        self.doc_done.add(key)
        return True

    def completed_output(self, index: int, stage: str) -> str | None:
        event = self.stage_done.get((index, stage))
        return event["output"] if event else None


# ---------------------------------------------------------------------------
# Backend factory (CLI path; tests inject clients directly)
# ---------------------------------------------------------------------------

def build_clients(cfg: PipelineConfig) -> PipelineClients:
    clients = PipelineClients()
    for role, spec in cfg.backends.items():
        kind = spec["type"]
        client: object
        if kind == "identity":
            if role == "refine":
                client = ls.identity_refine_client()
            elif role == "complete":
                client = ls.identity_complete_client()
            else:
                raise ConfigurationError(f"identity backend does not apply to role {role!r}")
        elif kind == "script":
            client = MockChatClient.from_script_file(spec["path"])
        elif kind == "http":
            client = HttpChatClient(
                endpoint=spec["endpoint"],
                model_name=spec.get("model", "default"),
                auth_token=spec.get("auth_token"),
                timeout=spec.get("timeout", 300.0),
            )
        elif kind == "scripted_labels":
            client = ScriptedClassifier(default=spec.get("labels") or default_labels())
        elif kind == "fixed_type":
            # always classifies documents as the configured type
            is_article = spec.get("result", "paper") == "paper"
            reply = json.dumps({"analysis": "configured fixed result", "is_article": is_article})
            client = MockChatClient(responder=lambda _p, _r=reply: _r)
        elif kind == "no_qa":
            client = MockChatClient(responder=lambda _p: "No QA")
        elif kind == "always_pass":
            client = MockChatClient(
                responder=lambda _p: json.dumps({"is_valid": True, "overall_assessment": "pass"})
            )
        elif kind == "trigram":
            client = TrigramDetector()
        else:
            raise ConfigurationError(f"unknown backend type {kind!r} for role {role!r}")
        attr = {
            "classify": "classifier",
            "book_paper": "book_paper",
            "refine": "refine",
            "complete": "complete",
            "mcq_generate": "mcq_generator",
            "mcq_completeness": "mcq_completeness",
            "mcq_correctness": "mcq_correctness",
            "language": "detector",
        }[role]
        setattr(clients, attr, client)
    return clients


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------

def _require(client, role: str):
    if client is None:
        raise ConfigurationError(f"stage requires a {role!r} backend but none is configured")
    return client


def _stage_dedup(docs, params, clients, ctx):
    kept, removed, report, _clusters = dd.dedup(
        docs,
        verify_threshold=params.get("verify_threshold", dd.DEFAULT_VERIFY_THRESHOLD),
        shingle_size=params.get("shingle_size", dd.DEFAULT_SHINGLE_SIZE),
    )
    kept = [d.with_stage(Stage.L2) if d.stage < Stage.L2 else d for d in kept]
    return kept, removed, [], {"dedup": report.to_record()}


def _stage_rule_filter(docs, params, clients, ctx):
    cfg = ft.RuleConfig(
        min_bytes=params.get("min_bytes", 8192),
        max_garbled_ratio=params.get("max_garbled_ratio", 0.5),
        target_language=params.get("target_language", "en"),
    )
    detector = clients.detector if params.get("use_language_detector", True) else None
    kept, dropped, report = ft.apply_rule_filters(docs, cfg, detector=detector)
    kept = [d.with_stage(Stage.L2) if d.stage < Stage.L2 else d for d in kept]
    return kept, dropped, [], {"rule_filter": report.to_record()}


def _stage_classify(docs, params, clients, ctx):
    classifier = _require(clients.classifier, "classify")
    blocklist = frozenset(params.get("blocklist", list(ft.DEFAULT_BLOCKLIST)))
    labeled, failed = ft.label_documents(docs, classifier)
    dmap = ft.default_discipline_map()
    kept, dropped = [], []
    for doc in labeled:
        reason = ft.educational_filter(doc.labels, blocklist)
        if reason:
            dropped.append(doc.dropped(reason))
            continue
        try:
            code = int(doc.labels.get("fdc_code", ""))
            discipline = dmap.discipline_of(code)
        except (TypeError, ValueError):
            discipline = None
        doc_type = doc.doc_type
        if doc_type not in (cp.DOC_TYPE_BOOK, cp.DOC_TYPE_PAPER):
            doc_type = ft.classify_book_paper(
                doc,
                _require(clients.book_paper, "book_paper"),
                max_attempts=params.get("book_paper_max_attempts", 3),
            )
            if doc_type == ft.BOOK_PAPER_FAILED:
                failed.append(doc.failed())
                continue
        rec = doc.to_record()
        rec["discipline"] = discipline
        rec["doc_type"] = doc_type
        kept.append(Document.from_record(rec).with_stage(Stage.L3))
    return kept, dropped, failed, {}


def _run_llm_stage(docs, stage, client, params, ctx):
    max_attempts = params.get("max_attempts", 3)
    max_workers = params.get("max_workers", 4)
    max_run = params.get("repetition_max_run", 20)
    kept, failed = [], []
    outcomes = []
    for doc in docs:
        if stage == Stage.L5 and doc.doc_type != cp.DOC_TYPE_PAPER:
            kept.append(doc)  # completion applies to papers only; books pass through
            continue
        verdict = None
        for _attempt in range(max_attempts):
            outcome = ls.run_stage(doc, stage, client, max_workers=max_workers, max_run=max_run)
            verdict = outcome
            if outcome.document_verdict == ls.VERDICT_SUCCESS:
                break
        outcomes.append(verdict.to_record())
        if ctx["ledger"] is not None:
            ctx["ledger"].record_doc(doc.id, stage.name, verdict.document_verdict)
        if verdict.document_verdict == ls.VERDICT_SUCCESS:
            kept.append(doc.with_text(verdict.output_text).with_stage(stage))
        else:
            failed.append(doc.failed())
    return kept, [], failed, {"outcomes": outcomes}


def _stage_refine(docs, params, clients, ctx):
    return _run_llm_stage(docs, Stage.L4, _require(clients.refine, "refine"), params, ctx)


def _stage_complete(docs, params, clients, ctx):
    return _run_llm_stage(docs, Stage.L5, _require(clients.complete, "complete"), params, ctx)


def _stage_decontam(docs, params, clients, ctx):
    samples = ctx.get("benchmark_samples")
    if samples is None:
        path = params.get("benchmark")
        if not path:
            raise ConfigurationError("decontam stage needs a 'benchmark' file")
        samples = list(dc.read_benchmark_jsonl(path))
    idx = dc.build_index(samples, n=params.get("ngram", dc.DEFAULT_NGRAM))
    kept, dropped, report = dc.decontaminate(docs, idx)
    return kept, dropped, [], {"decontam": report.to_record(), "index_grams": idx.gram_count()}


def _stage_benchgen(docs, params, clients, ctx):
    items, report = bg.build_benchmark(
        docs,
        _require(clients.mcq_generator, "mcq_generate"),
        _require(clients.mcq_completeness, "mcq_completeness"),
        _require(clients.mcq_correctness, "mcq_correctness"),
        window=params.get("window", bg.QA_WINDOW_TOKENS),
    )
    extra = {"benchgen": report.to_record()}
    out_path = params.get("output")
    if out_path and ctx.get("output_dir"):
        full = os.path.join(ctx["output_dir"], out_path)
        bg.write_items_jsonl(full, items)
        extra["pool_path"] = full
        k = params.get("sample_size")
        if k and len(items) >= k:
            sampled = bg.sample_eval_set(items, k, params.get("sample_seed", 0))
            shuffle_rng = random.Random(params.get("shuffle_seed", 0))
            rendered = [bg.render(item, shuffle_rng.randrange(1 << 30)) for item in sampled]
            eval_path = full.replace(".jsonl", "") + f".eval{k}.jsonl"
            with open(eval_path, "w", encoding="utf-8") as f:
                for item, r in zip(sampled, rendered):
                    rec = item.to_record()
                    rec.update(r.to_record())
                    f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            extra["eval_path"] = eval_path
    ctx["mcq_items"] = items
    return list(docs), [], [], extra


def _stage_portrait(docs, params, clients, ctx):
    docs = list(docs)
    report = cp.portrait(docs, group_by=params.get("group_by", "discipline"), tokenizer=ctx["tokenizer"])
    extra = {"portrait": report.to_records()}
    if ctx.get("output_dir"):
        path = os.path.join(ctx["output_dir"], f"portrait_{params.get('group_by', 'discipline')}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.to_records(), f, indent=2)
        extra["portrait_path"] = path
    return docs, [], [], extra


_STAGE_FNS = {
    "dedup": _stage_dedup,
    "rule_filter": _stage_rule_filter,
    "classify": _stage_classify,
    "refine": _stage_refine,
    "complete": _stage_complete,
    "decontam": _stage_decontam,
    "benchgen": _stage_benchgen,
    "portrait": _stage_portrait,
}


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    reports: list[StageReport]
    documents: list[Document]
    output_dir: str
    resumed_stages: int = 0
    mcq_pool: list | None = None


def run_pipeline(
    cfg: PipelineConfig,
    clients: PipelineClients | None = None,
    docs: list[Document] | None = None,
    benchmark_samples: list[dict] | None = None,
) -> RunResult:
    """Execute the configured stages in order.

    `docs` may be passed directly (tests); otherwise documents are ingested
    from cfg.input. Completed stages found in the ledger are skipped, so
    re-running a finished pipeline is a no-op.
    """
    if clients is None:
        clients = build_clients(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "resolved_config.json"), "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2)
    ledger = Ledger(os.path.join(cfg.output_dir, "ledger.jsonl"))
    tokenizer = TokenizerSpec(name=cfg.tokenizer["name"], kind=cfg.tokenizer["kind"])

    if docs is None:
        ingest_report = cp.IngestReport()
        docs = [d for d in cp.load_corpus(cfg.input, ingest_report) if d.is_active]
        log.info("loaded %d documents (%d skipped)", ingest_report.ingested, ingest_report.skipped)
    docs = [cp.ensure_token_count(d, tokenizer) for d in docs]

    ctx = {
        "tokenizer": tokenizer,
        "output_dir": cfg.output_dir,
        "ledger": ledger,
        "benchmark_samples": benchmark_samples,
        "seed": cfg.seed,
    }

    reports: list[StageReport] = []
    current = docs
    resumed = 0
    mcq_items = None
    for index, stage_cfg in enumerate(cfg.stages):
        out_path = os.path.join(cfg.output_dir, f"stage_{index:02d}_{stage_cfg.name}.jsonl")
        prior = ledger.completed_output(index, stage_cfg.name)
        if prior and os.path.exists(prior):
            current = list(cp.read_jsonl(prior))
            current = [d for d in current if d.is_active]
            resumed += 1
            report = StageReport(stage=stage_cfg.name, index=index)
            report.extra["resumed"] = True
            reports.append(report)
            continue

        report = _run_stage_once(stage_cfg, index, current, clients, ctx, out_path)
        reports.append(report)
        mcq_items = ctx.get("mcq_items", mcq_items)
        current = list(cp.read_jsonl(out_path)) if os.path.exists(out_path) else current
        current = [d for d in current if d.is_active]
        ledger.record_stage(report, out_path)

    return RunResult(
        reports=reports,
        documents=current,
        output_dir=cfg.output_dir,
        resumed_stages=resumed,
        mcq_pool=mcq_items,
    )


def _run_stage_once(stage_cfg: StageConfig, index, docs, clients, ctx, out_path) -> StageReport:
    fn = _STAGE_FNS[stage_cfg.name]
    docs = list(docs)
    kept, dropped, failed, extra = fn(docs, stage_cfg.params, clients, ctx)
    report = StageReport(
        stage=stage_cfg.name,
        index=index,
        input=len(docs),
        kept=len(kept),
        dropped=len(dropped),
        failed=len(failed),
        extra=extra,
    )
    for doc in dropped:
        reason = doc.drop_reason or "unknown"
        report.drop_reasons[reason] = report.drop_reasons.get(reason, 0) + 1
    if not report.balanced():
        raise StageFailure(
            f"stage {stage_cfg.name} lost documents: input={report.input} "
            f"kept={report.kept} dropped={report.dropped} failed={report.failed}"
        )
    cp.write_jsonl(out_path, kept + dropped + failed)
    with open(out_path.replace(".jsonl", ".report.json"), "w", encoding="utf-8") as f:
        json.dump(report.to_record(), f, indent=2)
    return report


def stage_task_handlers(clients: PipelineClients, docstore: str, max_workers: int = 4) -> dict:
    """Task handlers for distributed document processing through the queue.

    A task's payload_ref names a document JSON file under `docstore`. On a
    successful verdict the processed document is written next to it as
    <ref>.out.json (rewriting is idempotent, so at-least-once delivery is
    safe); a failed_requeue verdict reports the task failed, which requeues
    it until the retry bound marks it permanently failed.
    """
    from .orchestrator.queue import OUTCOME_DONE, OUTCOME_FAILED

    def run(task, stage: Stage) -> str:
        src = os.path.join(docstore, task.payload_ref)
        with open(src, "r", encoding="utf-8") as f:
            doc = Document.from_record(json.load(f))
        client = clients.refine if stage == Stage.L4 else clients.complete
        outcome = ls.run_stage(doc, stage, client, max_workers=max_workers)
        if outcome.document_verdict != ls.VERDICT_SUCCESS:
            return OUTCOME_FAILED
        processed = doc.with_text(outcome.output_text).with_stage(stage)
        with open(src + ".out.json", "w", encoding="utf-8") as f:
            json.dump(processed.to_record(), f, ensure_ascii=False)
        return OUTCOME_DONE

    return {
        "refine": lambda task: run(task, Stage.L4),
        "complete": lambda task: run(task, Stage.L5),
    }


def compact(in_path: str, out_path: str) -> tuple[int, int]:
    """Physically remove dropped/failed documents from a corpus file.
    Returns (kept, removed)."""
    kept = removed = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for doc in cp.read_jsonl(in_path):
            if doc.is_active:
                out.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")
                kept += 1
            else:
                removed += 1
    return kept, removed
