"""Command-line surface.

One verb per pipeline stage plus composition and the queue roles:

    scicorpus ingest RAW.jsonl -o DOCS.jsonl
    scicorpus dedup DOCS.jsonl -o OUT_DIR
    scicorpus filter DOCS.jsonl -o OUT_DIR [--min-bytes N] [--no-langdetect]
    scicorpus classify ... / refine ... / complete ... / decontam ... / benchgen ...
    scicorpus portrait DOCS.jsonl --group-by discipline
    scicorpus run CONFIG.json
    scicorpus queue-serve --port 7777
    scicorpus worker --port 7777 [--handlers noop,sleep]
    scicorpus stats --port 7777
    scicorpus compact DOCS.jsonl -o COMPACTED.jsonl

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import time
import uuid

from . import corpus as cp
from . import pipeline as pl
from .config import PipelineConfig, StageConfig, load_config
from .errors import ConfigurationError, ScicorpusError

log = logging.getLogger("scicorpus")

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def _single_stage_config(args, stage: str, params: dict) -> PipelineConfig:
    return PipelineConfig(
        input=args.input,
        output_dir=args.output,
        stages=[StageConfig(name=stage, params=params)],
        backends=_parse_backends(getattr(args, "backend", None) or []),
    )


def _parse_backends(pairs: list[str]) -> dict:
    """--backend role=type[,key=value...] repeated."""
    out: dict = {}
    for pair in pairs:
        role, _, rest = pair.partition("=")
        if not rest:
            raise ConfigurationError(f"--backend needs role=type, got {pair!r}")
        parts = rest.split(",")
        spec = {"type": parts[0]}
        for kv in parts[1:]:
            k, _, v = kv.partition("=")
            spec[k] = v
        out[role.strip()] = spec
    return out


def _print_reports(result: pl.RunResult) -> None:
    for report in result.reports:
        rec = report.to_record()
        line = (
            f"[{rec['stage']}] input={rec['input']} kept={rec['kept']} "
            f"dropped={rec['dropped']} failed={rec['failed']}"
        )
        if rec["drop_reasons"]:
            line += f" reasons={rec['drop_reasons']}"
        if rec["extra"].get("resumed"):
            line += " (resumed)"
        print(line)


def _run_stages(cfg: PipelineConfig) -> int:
    result = pl.run_pipeline(cfg)
    _print_reports(result)
    return EXIT_OK


# -- subcommand handlers ------------------------------------------------------

def cmd_ingest(args) -> int:
    report = cp.IngestReport()
    with open(args.input, "r", encoding="utf-8") as f:
        docs = list(cp.ingest(f, report))
    n = cp.write_jsonl(args.output, docs)
    print(json.dumps({"ingested": report.ingested, "skipped": report.skipped, "written": n}))
    return EXIT_OK


def cmd_dedup(args) -> int:
    return _run_stages(
        _single_stage_config(args, "dedup", {"verify_threshold": args.threshold})
    )


def cmd_filter(args) -> int:
    params = {
        "min_bytes": args.min_bytes,
        "max_garbled_ratio": args.max_garbled,
        "target_language": args.language,
        "use_language_detector": not args.no_langdetect,
    }
    cfg = _single_stage_config(args, "rule_filter", params)
    if not args.no_langdetect and "language" not in cfg.backends:
        cfg.backends["language"] = {"type": "trigram"}
    return _run_stages(cfg)


def cmd_classify(args) -> int:
    cfg = _single_stage_config(args, "classify", {})
    return _run_stages(cfg)


def cmd_refine(args) -> int:
    cfg = _single_stage_config(args, "refine", {"max_attempts": args.max_attempts})
    return _run_stages(cfg)


def cmd_complete(args) -> int:
    cfg = _single_stage_config(args, "complete", {"max_attempts": args.max_attempts})
    return _run_stages(cfg)


def cmd_decontam(args) -> int:
    cfg = _single_stage_config(
        args, "decontam", {"benchmark": args.benchmark, "ngram": args.ngram}
    )
    return _run_stages(cfg)


def cmd_benchgen(args) -> int:
    params = {"window": args.window, "output": args.pool}
    if args.sample_size:
        params.update(
            sample_size=args.sample_size,
            sample_seed=args.sample_seed,
            shuffle_seed=args.shuffle_seed,
        )
    return _run_stages(_single_stage_config(args, "benchgen", params))


def cmd_portrait(args) -> int:
    docs = [d for d in cp.read_jsonl(args.input) if d.is_active]
    report = cp.portrait(docs, group_by=args.group_by)
    if args.json:
        print(json.dumps(report.to_records(), indent=2))
    else:
        print(report.to_table())
    return EXIT_OK


def cmd_compact(args) -> int:
    kept, removed = pl.compact(args.input, args.output)
    print(json.dumps({"kept": kept, "removed": removed}))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = pl.run_pipeline(cfg)
    _print_reports(result)
    return EXIT_OK


def _orchestrator_settings(args):
    if getattr(args, "config", None):
        return load_config(args.config).orchestrator
    return None


def cmd_queue_serve(args) -> int:
    from .orchestrator import QueueServer, TaskQueue

    orch = _orchestrator_settings(args)
    queue = TaskQueue(
        heartbeat_timeout=orch.heartbeat_timeout if orch else args.heartbeat_timeout,
        reap_period=orch.reap_period if orch else args.reap_period,
        default_max_attempts=orch.max_attempts if orch else args.max_attempts,
    )
    server = QueueServer(queue, host=args.host, port=args.port)
    server.start()
    host, port = server.address
    print(json.dumps({"listening": f"{host}:{port}"}), flush=True)
    stop = []
    signal.signal(signal.SIGTERM, lambda *_: stop.append(1))
    signal.signal(signal.SIGINT, lambda *_: stop.append(1))
    try:
        while not stop:
            time.sleep(0.2)
    finally:
        server.stop()
    return EXIT_OK


def _builtin_handlers(names: list[str]) -> dict:
    from .orchestrator.queue import OUTCOME_DONE

    def noop(_task) -> str:
        return OUTCOME_DONE

    def sleep(task) -> str:
        time.sleep(float((task.payload or {}).get("seconds", 0.01)))
        return OUTCOME_DONE

    table = {"noop": noop, "sleep": sleep}
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ConfigurationError(f"unknown handler kinds: {unknown}")
    return {n: table[n] for n in names}


def cmd_worker(args) -> int:
    from .orchestrator import QueueClient, WorkerRuntime

    worker_id = args.worker_id or f"{os.uname().nodename}-{os.getpid()}-{uuid.uuid4().hex[:6]}"
    orch = _orchestrator_settings(args)
    client = QueueClient(orch.host if orch else args.host, orch.port if orch else args.port)
    requested = args.handlers.split(",")
    stage_kinds = [k for k in requested if k in ("refine", "complete")]
    handlers = _builtin_handlers([k for k in requested if k not in ("refine", "complete")])
    if stage_kinds:
        if not args.docstore:
            raise ConfigurationError("refine/complete handlers need --docstore")
        cfg = PipelineConfig(
            input="unused", output_dir=args.docstore,
            stages=[StageConfig("refine", {})],
            backends=_parse_backends(args.backend or []),
        )
        stage_handlers = pl.stage_task_handlers(pl.build_clients(cfg), args.docstore)
        handlers.update({k: stage_handlers[k] for k in stage_kinds})
    runtime = WorkerRuntime(
        client,
        worker_id,
        handlers,
        heartbeat_interval=orch.heartbeat_interval if orch else args.heartbeat_interval,
        drain=args.drain,
    )
    signal.signal(signal.SIGTERM, lambda *_: runtime.stop())
    signal.signal(signal.SIGINT, lambda *_: runtime.stop())
    processed = runtime.run()
    print(json.dumps({"worker_id": worker_id, "processed": processed}))
    return EXIT_OK


def cmd_stats(args) -> int:
    from .orchestrator import QueueClient

    client = QueueClient(args.host, args.port)
    print(json.dumps(client.stats(), indent=2))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scicorpus", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p, output_is_dir=True):
        p.add_argument("input", help="input corpus JSONL")
        p.add_argument(
            "-o", "--output", required=True,
            help="output directory" if output_is_dir else "output file",
        )
        p.add_argument("--backend", action="append", help="role=type[,k=v...]")

    p = sub.add_parser("ingest", help="normalize raw records into documents")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("dedup", help="near-duplicate removal")
    add_io(p)
    p.add_argument("--threshold", type=float, default=0.8)
    p.set_defaults(fn=cmd_dedup)

    p = sub.add_parser("filter", help="rule-based filtering")
    add_io(p)
    p.add_argument("--min-bytes", type=int, default=8192)
    p.add_argument("--max-garbled", type=float, default=0.5)
    p.add_argument("--language", default="en")
    p.add_argument("--no-langdetect", action="store_true")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("classify", help="label, discipline-map, and type-split documents")
    add_io(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("refine", help="generative refinement over 1024-char chunks")
    add_io(p)
    p.add_argument("--max-attempts", type=int, default=3)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("complete", help="cognitive completion over 1024-token windows (papers)")
    add_io(p)
    p.add_argument("--max-attempts", type=int, default=3)
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("decontam", help="exact n-gram benchmark decontamination")
    add_io(p)
    p.add_argument("--benchmark", required=True, help="JSONL with {problem, solution} records")
    p.add_argument("--ngram", type=int, default=20)
    p.set_defaults(fn=cmd_decontam)

    p = sub.add_parser("benchgen", help="MCQ benchmark construction")
    add_io(p)
    p.add_argument("--window", type=int, default=4096)
    p.add_argument("--pool", default="mcq_pool.jsonl")
    p.add_argument("--sample-size", type=int, default=0, help="also emit a rendered eval subset")
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.set_defaults(fn=cmd_benchgen)

    p = sub.add_parser("portrait", help="per-category corpus statistics")
    p.add_argument("input")
    p.add_argument("--group-by", default="discipline")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_portrait)

    p = sub.add_parser("compact", help="physically remove dropped/failed documents")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_compact)

    p = sub.add_parser("run", help="run a configured multi-stage pipeline")
    p.add_argument("config")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("queue-serve", help="host the task queue protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7777)
    p.add_argument("--heartbeat-timeout", type=float, default=60.0)
    p.add_argument("--reap-period", type=float, default=15.0)
    p.add_argument("--max-attempts", type=int, default=3)
    p.add_argument("--config", default=None, help="pipeline config supplying orchestrator settings")
    p.set_defaults(fn=cmd_queue_serve)

    p = sub.add_parser("worker", help="lease and execute tasks from a queue server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7777)
    p.add_argument("--worker-id", default=None)
    p.add_argument("--handlers", default="noop,sleep",
                   help="comma list of task kinds: noop, sleep, refine, complete")
    p.add_argument("--docstore", default=None, help="document directory for refine/complete tasks")
    p.add_argument("--backend", action="append", help="role=type[,k=v...] for stage handlers")
    p.add_argument("--heartbeat-interval", type=float, default=1.0)
    p.add_argument("--drain", action="store_true", help="exit when the queue is empty")
    p.add_argument("--config", default=None, help="pipeline config supplying orchestrator settings")
    p.set_defaults(fn=cmd_worker)

    p = sub.add_parser("stats", help="queue statistics")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7777)
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except ScicorpusError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("stage aborted")
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
