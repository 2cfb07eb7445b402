"""Generative refinement and cognitive completion stages.

Documents are segmented into bounded windows (1,024 characters for
refinement, 1,024 tokens for completion), each chunk goes through a teacher
model, and results are reassembled in order. A document succeeds when at
least 95% of its chunks are correctly cleaned; otherwise it is marked for
re-queueing. Failed chunks keep their original text.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .corpus import DOC_TYPE_PAPER, Document, Stage
from .errors import PreconditionError
from .model_client import ChatClient, ChatRequest
from .prompts import fill, load_prompt

UNIT_CHARS = "chars"
UNIT_TOKENS = "tokens"

CHUNK_PENDING = "pending"
CHUNK_CLEANED = "cleaned"
CHUNK_FAILED = "failed"
CHUNK_RETAINED = "retained_original"

VERDICT_SUCCESS = "success"
VERDICT_FAILED_REQUEUE = "failed_requeue"

SUCCESS_THRESHOLD = 0.95  # cleaned_chunks / total_chunks

L4_WINDOW_CHARS = 1024
L5_WINDOW_TOKENS = 1024

FAIL_MALFORMED = "malformed"
FAIL_REPETITION = "repetition"
FAIL_TRANSPORT = "transport"
FAIL_EMPTY = "empty"


@dataclass
class Chunk:
    doc_id: str
    index: int
    unit: str
    span: tuple[int, int]
    text: str
    status: str = CHUNK_PENDING


@dataclass
class StageOutcome:
    doc_id: str
    total_chunks: int
    cleaned_chunks: int
    failed_chunks: int
    document_verdict: str
    output_text: str
    failure_reasons: dict[str, int]

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "total_chunks": self.total_chunks,
            "cleaned_chunks": self.cleaned_chunks,
            "failed_chunks": self.failed_chunks,
            "document_verdict": self.document_verdict,
            "failure_reasons": dict(self.failure_reasons),
        }


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------

_PARA_BREAK = re.compile(r"\n[ \t]*\n")
_SENTENCE_END = re.compile(r"[.!?][\"')\]]*\s")
_TOKEN = re.compile(r"\S+")


def _best_cut(text: str, start: int, ceiling: int) -> int:
    """Pick a cut in (start, ceiling]: after the last paragraph break if one
    exists, else after the last sentence end, else hard at the ceiling."""
    window = text[start:ceiling]
    cut = None
    for m in _PARA_BREAK.finditer(window):
        cut = m.end()
    if cut is None:
        for m in _SENTENCE_END.finditer(window):
            cut = m.end()
    if cut is None or cut == 0:
        return ceiling
    return start + cut


def chunk_document(doc: Document | str, unit: str, window: int) -> list[Chunk]:
    """Greedy segmentation: fill up to `window`, preferring paragraph
    boundaries, then sentence boundaries, else a hard cut. Concatenating the
    chunk texts reconstructs the source exactly."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if isinstance(doc, Document):
        text, doc_id = doc.text, doc.id
    else:
        text, doc_id = doc, ""
    if not text:
        return []

    chunks: list[Chunk] = []
    if unit == UNIT_CHARS:
        pos = 0
        while pos < len(text):
            if len(text) - pos <= window:
                cut = len(text)
            else:
                cut = _best_cut(text, pos, pos + window)
            chunks.append(
                Chunk(doc_id=doc_id, index=len(chunks), unit=unit, span=(pos, cut), text=text[pos:cut])
            )
            pos = cut
    elif unit == UNIT_TOKENS:
        spans = [m.span() for m in _TOKEN.finditer(text)]
        if not spans:
            # whitespace-only document: one chunk, zero tokens
            return [Chunk(doc_id=doc_id, index=0, unit=unit, span=(0, 0), text=text)]
        pos = 0
        tok = 0
        while tok < len(spans):
            if tok + window >= len(spans):
                cut = len(text)
                next_tok = len(spans)
            else:
                # Paragraph/sentence cuts land right after whitespace, so they
                # are always token-boundary safe; the ceiling (start of the
                # first token past the window) caps the chunk at `window`
                # tokens.
                ceiling = spans[tok + window][0]
                cut = _best_cut(text, pos, ceiling)
                if cut <= spans[tok][0]:  # must consume at least one token
                    cut = ceiling
                next_tok = tok + window
                while spans[next_tok - 1][0] >= cut:
                    next_tok -= 1
            chunks.append(
                Chunk(doc_id=doc_id, index=len(chunks), unit=unit, span=(tok, next_tok), text=text[pos:cut])
            )
            pos = cut
            tok = next_tok
    else:
        raise ValueError(f"unknown chunk unit {unit!r}")
    return chunks


# ---------------------------------------------------------------------------
# Repetition detection
# ---------------------------------------------------------------------------

_REP_WINDOW = 20  # tokens


def detect_repetition(text: str, max_run: int = 20) -> bool:
    """True iff any line, or any 20-token window, repeats consecutively at
    least `max_run` times. Catches looped generations."""
    if max_run < 2:
        raise ValueError("max_run must be >= 2")
    lines = text.split("\n")
    run = 1
    for prev, cur in zip(lines, lines[1:]):
        run = run + 1 if cur == prev else 1
        if run >= max_run:
            return True
    tokens = text.split()
    w = _REP_WINDOW
    if len(tokens) >= w * 2:
        need = w * (max_run - 1)
        run = 0
        for i in range(len(tokens) - w):
            if tokens[i] == tokens[i + w]:
                run += 1
                if run >= need:
                    return True
            else:
                run = 0
    return False


# ---------------------------------------------------------------------------
# Per-chunk operations
# ---------------------------------------------------------------------------

class ChunkFailure(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


_L4_TEMPLATE: str | None = None
_L5_TEMPLATE: str | None = None


def _l4_prompt(chunk_text: str) -> str:
    global _L4_TEMPLATE
    if _L4_TEMPLATE is None:
        _L4_TEMPLATE = load_prompt("l4_refine")
    return _L4_TEMPLATE.replace("[CHUNK]", chunk_text)


def _l5_prompt(chunk_text: str) -> str:
    global _L5_TEMPLATE
    if _L5_TEMPLATE is None:
        _L5_TEMPLATE = load_prompt("l5_complete")
    return fill(_L5_TEMPLATE, chunk=chunk_text)


_OPEN_TAG = "<CLEANED_TEXT>"
_CLOSE_TAG = "</CLEANED_TEXT>"


def extract_cleaned_text(reply: str) -> str:
    """Content strictly between the first <CLEANED_TEXT> and its closing tag.
    An empty body is a valid result meaning the whole chunk was deleted."""
    start = reply.find(_OPEN_TAG)
    if start < 0:
        raise ChunkFailure(FAIL_MALFORMED)
    end = reply.find(_CLOSE_TAG, start + len(_OPEN_TAG))
    if end < 0:
        raise ChunkFailure(FAIL_MALFORMED)
    body = reply[start + len(_OPEN_TAG) : end]
    # The tags sit on their own lines; shed that framing only.
    if body.startswith("\n"):
        body = body[1:]
    if body.endswith("\n"):
        body = body[:-1]
    return body


def _teacher_request(prompt: str, chunk_text: str) -> ChatRequest:
    # Deterministic decoding; output budget is four times the chunk's
    # estimated token count (refinement shrinks text, completion grows it).
    estimate = max(len(chunk_text.split()), len(chunk_text) // 4, 1)
    return ChatRequest.user(prompt, temperature=0.0, max_output_tokens=4 * estimate + 256)


def _chat_with_transport_retry(client: ChatClient, prompt: str, chunk_text: str):
    """One immediate retry on transport failure before giving up."""
    req = _teacher_request(prompt, chunk_text)
    reply = client.chat(req)
    if reply.is_error:
        reply = client.chat(req)
    if reply.is_error:
        raise ChunkFailure(FAIL_TRANSPORT)
    return reply


def refine_chunk_l4(chunk: Chunk, client: ChatClient, max_run: int = 20) -> str:
    """Clean one character-window chunk. Returns the cleaned text (possibly
    empty = full deletion) or raises ChunkFailure."""
    if chunk.unit != UNIT_CHARS:
        raise PreconditionError("refinement expects character-window chunks")
    reply = _chat_with_transport_retry(client, _l4_prompt(chunk.text), chunk.text)
    cleaned = extract_cleaned_text(reply.content)
    if detect_repetition(cleaned, max_run=max_run):
        raise ChunkFailure(FAIL_REPETITION)
    return cleaned


def complete_chunk_l5(chunk: Chunk, client: ChatClient, max_run: int = 20) -> str:
    """Rewrite one token-window chunk of a paper. The whole trimmed reply is
    the rewritten chunk; raises ChunkFailure on empty/looped/error replies.

    The chunk's own leading/trailing whitespace is re-attached around the
    trimmed reply so that reassembled documents keep their paragraph breaks
    (and an identity teacher is an exact no-op).
    """
    if chunk.unit != UNIT_TOKENS:
        raise PreconditionError("completion expects token-window chunks")
    reply = _chat_with_transport_retry(client, _l5_prompt(chunk.text), chunk.text)
    rewritten = reply.content.strip()
    if not rewritten:
        raise ChunkFailure(FAIL_EMPTY)
    if detect_repetition(rewritten, max_run=max_run):
        raise ChunkFailure(FAIL_REPETITION)
    stripped = chunk.text.strip()
    lead = chunk.text[: len(chunk.text) - len(chunk.text.lstrip())]
    trail = chunk.text[len(lead) + len(stripped) :]
    return lead + rewritten + trail


# ---------------------------------------------------------------------------
# Stage runner
# ---------------------------------------------------------------------------

def run_stage(
    doc: Document,
    stage: Stage,
    client: ChatClient,
    max_workers: int = 4,
    max_run: int = 20,
) -> StageOutcome:
    """Process every chunk of `doc` through the given stage (L4 or L5) and
    reassemble results in chunk order regardless of completion order.

    Verdict is "success" iff cleaned/total >= 0.95 (vacuously true for empty
    documents); otherwise "failed_requeue". Failed chunks contribute their
    original text to the output.
    """
    if stage == Stage.L4:
        chunks = chunk_document(doc, UNIT_CHARS, L4_WINDOW_CHARS)
        process = refine_chunk_l4
    elif stage == Stage.L5:
        if doc.doc_type != DOC_TYPE_PAPER:
            raise PreconditionError(
                f"cognitive completion applies to papers only, got doc_type={doc.doc_type!r}"
            )
        chunks = chunk_document(doc, UNIT_TOKENS, L5_WINDOW_TOKENS)
        process = complete_chunk_l5
    else:
        raise ValueError(f"run_stage handles L4/L5, got {stage.name}")

    results: dict[int, str] = {}
    failures: dict[str, int] = {}

    def work(chunk: Chunk) -> tuple[int, str, str]:
        try:
            return chunk.index, CHUNK_CLEANED, process(chunk, client, max_run=max_run)
        except ChunkFailure as fail:
            return chunk.index, fail.reason, chunk.text

    if chunks:
        with ThreadPoolExecutor(max_workers=min(max_workers, len(chunks))) as pool:
            outcomes = list(pool.map(work, chunks))
    else:
        outcomes = []

    cleaned = 0
    for index, status, text in outcomes:
        results[index] = text
        if status == CHUNK_CLEANED:
            chunks[index].status = CHUNK_CLEANED
            cleaned += 1
        else:
            chunks[index].status = CHUNK_RETAINED
            failures[status] = failures.get(status, 0) + 1

    total = len(chunks)
    failed = total - cleaned
    verdict = VERDICT_SUCCESS
    if total and cleaned / total < SUCCESS_THRESHOLD:
        verdict = VERDICT_FAILED_REQUEUE
    output = "".join(results[i] for i in range(total))
    return StageOutcome(
        doc_id=doc.id,
        total_chunks=total,
        cleaned_chunks=cleaned,
        failed_chunks=failed,
        document_verdict=verdict,
        output_text=output,
        failure_reasons=failures,
    )


# ---------------------------------------------------------------------------
# Scripted teachers
# ---------------------------------------------------------------------------

def chunk_from_l4_prompt(prompt: str) -> str:
    """Recover the substituted chunk from a refinement prompt."""
    head = prompt.split("## Input:\nOCR document chunk:\n", 1)[1]
    return head.rsplit("\n\n## Output Format:", 1)[0]


def chunk_from_l5_prompt(prompt: str) -> str:
    """Recover the substituted chunk from a completion prompt."""
    head = prompt.split("**Original text:**\n", 1)[1]
    return head.rsplit("\n\n**Refined text:**", 1)[0]


def identity_refine_client():
    """Teacher that returns every chunk unchanged inside the output tags."""
    from .model_client import MockChatClient

    return MockChatClient(
        responder=lambda p: f"{_OPEN_TAG}\n{chunk_from_l4_prompt(p)}\n{_CLOSE_TAG}"
    )


def identity_complete_client():
    """Teacher that returns every chunk unchanged."""
    from .model_client import MockChatClient

    return MockChatClient(responder=lambda p: chunk_from_l5_prompt(p))
