"""Evaluation-benchmark construction: 4096-token semantic segmentation,
seven-option MCQ generation grounded in the source text, a two-stage judge
pipeline (independence, then answer verifiability), deterministic option
shuffling, and eval-set sampling.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable

from .corpus import Document
from .llm_stages import UNIT_TOKENS, Chunk, chunk_document
from .model_client import ChatClient, ChatRequest
from .prompts import fill, load_prompt

QA_WINDOW_TOKENS = 4096

MCQ_FIELDS = (
    "question",
    "correct_option",
    "reference",
    "incorrect_option_1",
    "incorrect_option_2",
    "incorrect_option_3",
    "incorrect_option_4",
    "incorrect_option_5",
    "incorrect_option_6",
)

OPTION_LABELS = "ABCDEFG"

RESULT_ITEM = "item"
RESULT_NO_QA = "no_qa"
RESULT_FAILURE = "failure"

FAIL_MALFORMED = "malformed"
FAIL_SCHEMA = "schema"
FAIL_DEGENERATE = "degenerate_options"
FAIL_UNGROUNDED = "ungrounded_reference"
FAIL_JUDGE = "judge_malformed"


@dataclass
class McqItem:
    question: str
    correct_option: str
    incorrect_options: list[str]  # exactly 6
    reference: str
    source_doc_id: str = ""
    source_segment_index: int = 0

    def __post_init__(self):
        if len(self.incorrect_options) != 6:
            raise ValueError("an item carries exactly six incorrect options")
        options = [self.correct_option] + self.incorrect_options
        if len(set(options)) != 7:
            raise ValueError("option texts must be pairwise distinct")

    @property
    def options(self) -> list[str]:
        return [self.correct_option] + self.incorrect_options

    def to_record(self) -> dict:
        rec = {"question": self.question, "correct_option": self.correct_option,
               "reference": self.reference}
        for i, opt in enumerate(self.incorrect_options, start=1):
            rec[f"incorrect_option_{i}"] = opt
        rec["source_doc_id"] = self.source_doc_id
        rec["source_segment_index"] = self.source_segment_index
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "McqItem":
        return cls(
            question=rec["question"],
            correct_option=rec["correct_option"],
            incorrect_options=[rec[f"incorrect_option_{i}"] for i in range(1, 7)],
            reference=rec["reference"],
            source_doc_id=rec.get("source_doc_id", ""),
            source_segment_index=rec.get("source_segment_index", 0),
        )


@dataclass
class RenderedMcq:
    question: str
    options: list[str]  # ordered, labeled A..G
    answer_label: str
    shuffle_seed: int

    def to_record(self) -> dict:
        return {
            "question": self.question,
            "options": list(self.options),
            "answer_label": self.answer_label,
            "shuffle_seed": self.shuffle_seed,
        }


@dataclass
class McqResult:
    status: str
    item: McqItem | None = None
    reason: str | None = None


@dataclass
class FilterResult:
    passed: bool
    explanation: str | None = None


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def segment_for_qa(doc: Document, window: int = QA_WINDOW_TOKENS) -> list[Chunk]:
    """Token windows up to `window`, breaking at paragraph boundaries where
    possible."""
    return chunk_document(doc, UNIT_TOKENS, window)


# ---------------------------------------------------------------------------
# Reply parsing
# ---------------------------------------------------------------------------

def is_no_qa(reply: str) -> bool:
    """Trimmed reply equal to "No QA" or starting with it before any
    whitespace/punctuation, case-insensitive."""
    t = reply.strip().lower()
    if t == "no qa":
        return True
    return t.startswith("no qa") and not t[5:6].isalnum()


def extract_final_json(reply: str) -> dict | None:
    """The last balanced top-level JSON object in the reply; anything before
    it (reasoning traces, markdown fences) is ignored."""
    spans = []
    depth = 0
    start = -1
    in_string = False
    escape = False
    for i, ch in enumerate(reply):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
            continue
        if ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append((start, i + 1))
    for lo, hi in reversed(spans):
        try:
            obj = json.loads(reply[lo:hi])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_mcq(
    segment: str,
    client: ChatClient,
    source_doc_id: str = "",
    source_segment_index: int = 0,
) -> McqResult:
    """Generate one seven-option question from a text segment.

    A "No QA" reply is a valid outcome for unsuitable segments. The parsed
    item must carry all eight schema fields, pairwise-distinct options, and a
    reference that is a contiguous excerpt of the segment.
    """
    if not segment.strip():
        raise ValueError("segment must be non-empty")
    prompt = fill(load_prompt("mcq_generate"), chunk_text=segment)
    reply = client.chat(ChatRequest.user(prompt))
    if reply.is_error:
        return McqResult(RESULT_FAILURE, reason=FAIL_MALFORMED)
    if is_no_qa(reply.content):
        return McqResult(RESULT_NO_QA)
    parsed = extract_final_json(reply.content)
    if parsed is None:
        return McqResult(RESULT_FAILURE, reason=FAIL_MALFORMED)
    missing = [f for f in MCQ_FIELDS if f not in parsed]
    if missing:
        return McqResult(RESULT_FAILURE, reason=FAIL_SCHEMA)
    values = {f: parsed[f] for f in MCQ_FIELDS}
    if not all(isinstance(v, str) and v.strip() for v in values.values()):
        return McqResult(RESULT_FAILURE, reason=FAIL_SCHEMA)
    options = [values["correct_option"]] + [values[f"incorrect_option_{i}"] for i in range(1, 7)]
    if len(set(options)) != 7:
        return McqResult(RESULT_FAILURE, reason=FAIL_DEGENERATE)
    if values["reference"] not in segment:
        return McqResult(RESULT_FAILURE, reason=FAIL_UNGROUNDED)
    item = McqItem(
        question=values["question"],
        correct_option=values["correct_option"],
        incorrect_options=options[1:],
        reference=values["reference"],
        source_doc_id=source_doc_id,
        source_segment_index=source_segment_index,
    )
    return McqResult(RESULT_ITEM, item=item)


# ---------------------------------------------------------------------------
# Judge filters
# ---------------------------------------------------------------------------

def _item_json(item: McqItem) -> str:
    rec = item.to_record()
    rec.pop("source_doc_id", None)
    rec.pop("source_segment_index", None)
    return json.dumps(rec, ensure_ascii=False, indent=2)


def _run_judge(client: ChatClient, prompt: str) -> FilterResult:
    """One retry on a malformed judge reply, then fail."""
    for _ in range(2):
        reply = client.chat(ChatRequest.user(prompt))
        if reply.is_error:
            continue
        parsed = extract_final_json(reply.content)
        if parsed is None or not isinstance(parsed.get("is_valid"), bool):
            continue
        explanation = parsed.get("overall_assessment")
        return FilterResult(passed=parsed["is_valid"], explanation=explanation)
    return FilterResult(passed=False, explanation=FAIL_JUDGE)


def completeness_filter(item: McqItem, client: ChatClient) -> FilterResult:
    """Independence check: the judge sees only the question, never the
    source segment."""
    prompt = fill(load_prompt("mcq_completeness"), extracted_json_qa=_item_json(item))
    return _run_judge(client, prompt)


def correctness_filter(item: McqItem, source_segment: str, client: ChatClient) -> FilterResult:
    """Verifiability check: the judge sees the source text plus the QA."""
    prompt = fill(
        load_prompt("mcq_correctness"),
        text=source_segment,
        extracted_json_qa=_item_json(item),
    )
    return _run_judge(client, prompt)


# ---------------------------------------------------------------------------
# Rendering and sampling
# ---------------------------------------------------------------------------

def _permutation(seed: int) -> list[int]:
    order = list(range(7))
    random.Random(seed).shuffle(order)
    return order


def render(item: McqItem, seed: int) -> RenderedMcq:
    """Deterministic shuffle of the seven options into labels A..G."""
    perm = _permutation(seed)
    all_options = item.options
    options = [all_options[j] for j in perm]
    answer_label = OPTION_LABELS[perm.index(0)]
    return RenderedMcq(
        question=item.question,
        options=options,
        answer_label=answer_label,
        shuffle_seed=seed,
    )


def unshuffle(rendered: RenderedMcq) -> list[str]:
    """Recover the original option order from the recorded seed."""
    perm = _permutation(rendered.shuffle_seed)
    original = [""] * 7
    for pos, j in enumerate(perm):
        original[j] = rendered.options[pos]
    return original


def sample_eval_set(items: list, k: int, seed: int) -> list:
    """Uniform without-replacement sample, deterministic per seed."""
    if len(items) < k:
        raise ValueError(f"pool of {len(items)} items cannot supply {k}")
    return random.Random(seed).sample(items, k)


# ---------------------------------------------------------------------------
# Pipeline composition
# ---------------------------------------------------------------------------

@dataclass
class BenchgenReport:
    segments: int = 0
    no_qa: int = 0
    generation_failures: dict[str, int] = field(default_factory=dict)
    completeness_failed: int = 0
    correctness_failed: int = 0
    emitted: int = 0

    def to_record(self) -> dict:
        return {
            "segments": self.segments,
            "no_qa": self.no_qa,
            "generation_failures": dict(self.generation_failures),
            "completeness_failed": self.completeness_failed,
            "correctness_failed": self.correctness_failed,
            "emitted": self.emitted,
        }


def build_benchmark(
    docs: Iterable[Document],
    generator: ChatClient,
    completeness_judge: ChatClient,
    correctness_judge: ChatClient,
    window: int = QA_WINDOW_TOKENS,
) -> tuple[list[McqItem], BenchgenReport]:
    """Segment documents, generate one candidate item per segment, and keep
    only items passing both judge filters (independence, then correctness)."""
    report = BenchgenReport()
    items: list[McqItem] = []
    for doc in docs:
        for chunk in segment_for_qa(doc, window=window):
            if not chunk.text.strip():
                continue
            report.segments += 1
            result = generate_mcq(
                chunk.text, generator,
                source_doc_id=doc.id, source_segment_index=chunk.index,
            )
            if result.status == RESULT_NO_QA:
                report.no_qa += 1
                continue
            if result.status == RESULT_FAILURE:
                report.generation_failures[result.reason] = (
                    report.generation_failures.get(result.reason, 0) + 1
                )
                continue
            item = result.item
            if not completeness_filter(item, completeness_judge).passed:
                report.completeness_failed += 1
                continue
            if not correctness_filter(item, chunk.text, correctness_judge).passed:
                report.correctness_failed += 1
                continue
            items.append(item)
            report.emitted += 1
    return items, report


def write_items_jsonl(path: str, items: Iterable[McqItem]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for item in items:
            f.write(json.dumps(item.to_record(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_items_jsonl(path: str) -> list[McqItem]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(McqItem.from_record(json.loads(line)))
    return out
