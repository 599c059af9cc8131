"""Operator surface: single runs, batch runs, memory inspection, and
retrieval-quality judging.

Machine-readable output is line-delimited JSON on stdout; human diagnostics
and error JSON go to stderr. Exit code 2 marks configuration/usage errors,
1 marks runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .backends.http import HttpChatBackend, HttpEmbedBackend, HttpImageBackend
from .backends.mock import mock_backend_set
from .backends.types import BackendSet, embed_text
from .config import CliSettings, resolve_settings
from .engine import (
    WorkflowConfig,
    fixed_clock,
    guidance_active,
    run_workflow,
    utc_now,
)
from .errors import SchemaViolation, SidiffError
from .guidance import judge_retrieval
from .memory import KnowledgeBase, StoreId, open_kb


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 2):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _diag(message: str) -> None:
    print(message, file=sys.stderr)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True), file=sys.stderr)


def _settings(args: argparse.Namespace) -> CliSettings:
    flag_values = {
        name: getattr(args, name, None)
        for name in (
            "tau",
            "max_edits",
            "k",
            "seed",
            "kb",
            "out",
            "mock",
            "episode",
            "concurrency",
            "retries",
            "embed_dim",
            "activation_threshold",
        )
    }
    try:
        return resolve_settings(flag_values, config_path=getattr(args, "config", None))
    except (ValueError, OSError) as exc:
        raise CliError("BadConfig", str(exc))


def _backends(settings: CliSettings) -> BackendSet:
    if settings.mock:
        return mock_backend_set(dim=settings.embed_dim)
    missing = [
        name
        for name, url in (
            ("chat", settings.chat_url),
            ("embed", settings.embed_url),
            ("gen", settings.gen_url),
            ("edit", settings.edit_url),
        )
        if not url
    ]
    if missing:
        raise CliError(
            "MissingBackend",
            f"no endpoint configured for: {', '.join(missing)} "
            "(set SIDIFF_*_URL or pass --mock)",
        )
    api_key = settings.api_key or None
    image = HttpImageBackend(
        gen_endpoint=settings.gen_url,
        edit_endpoint=settings.edit_url,
        api_key=api_key,
    )
    return BackendSet(
        chat=HttpChatBackend(settings.chat_url, api_key=api_key),
        embed=HttpEmbedBackend(settings.embed_url, api_key=api_key),
        gen=image,
        edit=image,
    )


def _open_kb(settings: CliSettings, cfg: WorkflowConfig) -> KnowledgeBase:
    return open_kb(settings.kb, settings.embed_dim, max_regenerations=cfg.max_edits)


def _clock(settings: CliSettings):
    return fixed_clock() if settings.mock else utc_now


# -- run ---------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    if not args.prompt.strip():
        raise CliError("EmptyPrompt", "prompt must be non-empty")
    settings = _settings(args)
    cfg = settings.workflow_config()
    backends = _backends(settings)
    with _open_kb(settings, cfg) as kb:
        result = run_workflow(
            args.prompt,
            cfg,
            kb,
            backends,
            runs_dir=settings.out,
            clock=_clock(settings),
            episode=settings.episode or None,
        )
    _diag(
        f"run {result.run_id}: overall {result.overall:.4g}, "
        f"edits {result.edits_used}, {result.wall_time:.2f}s"
    )
    _emit(
        {
            "run_id": result.run_id,
            "overall": result.overall,
            "edits_used": result.edits_used,
            "trajectory_id_gen": result.trajectory_id_gen,
            "trajectory_id_edit": result.trajectory_id_edit,
            "tau": cfg.tau,
            "max_edits": cfg.max_edits,
        }
    )
    return 0


# -- batch ---------------------------------------------------------------------


def _load_batch_spec(path: Path) -> list[dict]:
    if not path.exists():
        raise CliError("MissingInput", f"batch input {path} does not exist")
    items = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError("BadInput", f"line {line_no} is not JSON: {exc}")
            if "id" not in obj or "prompt" not in obj:
                raise CliError("BadInput", f"line {line_no} must carry id and prompt")
            items.append(obj)
    ids = [str(item["id"]) for item in items]
    if len(set(ids)) != len(ids):
        raise CliError("DuplicateIds", "batch ids must be unique")
    if not items:
        raise CliError("BadInput", "batch input is empty")
    return items


def cmd_batch(args: argparse.Namespace) -> int:
    settings = _settings(args)
    cfg = settings.workflow_config()
    items = _load_batch_spec(Path(args.input))
    backends = _backends(settings)
    out_dir = Path(settings.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    clock = _clock(settings)

    with _open_kb(settings, cfg) as kb:

        def _one(item: dict) -> dict:
            run_cfg = (
                replace(cfg, seed=int(item["seed"])) if item.get("seed") is not None else cfg
            )
            try:
                result = run_workflow(
                    str(item["prompt"]),
                    run_cfg,
                    kb,
                    backends,
                    runs_dir=out_dir,
                    run_id=str(item["id"]),
                    clock=clock,
                    episode=settings.episode or None,
                )
            except (SidiffError, ValueError) as exc:
                return {"id": str(item["id"]), "error": type(exc).__name__, "message": str(exc)}
            return {
                "id": str(item["id"]),
                "score": result.overall,
                "edits": result.edits_used,
                "trajectory_id_gen": result.trajectory_id_gen,
                "trajectory_id_edit": result.trajectory_id_edit,
            }

        workers = max(1, settings.concurrency)
        if workers == 1:
            summaries = [_one(item) for item in items]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                summaries = list(pool.map(_one, items))

    summary_path = out_dir / "summary.jsonl"
    with summary_path.open("w", encoding="utf-8") as fh:
        for summary in summaries:
            line = json.dumps(summary, sort_keys=True)
            fh.write(line + "\n")
            print(line, flush=True)

    failures = sum(1 for s in summaries if "error" in s)
    _diag(f"batch: {len(summaries) - failures}/{len(summaries)} runs ok -> {summary_path}")
    return 1 if failures else 0


# -- memory ---------------------------------------------------------------------


def _require_kb_dir(settings: CliSettings) -> None:
    if not Path(settings.kb).exists():
        raise CliError("KbNotFound", f"knowledge base path {settings.kb} does not exist")


def cmd_memory_stats(args: argparse.Namespace) -> int:
    settings = _settings(args)
    cfg = settings.workflow_config()
    _require_kb_dir(settings)
    with _open_kb(settings, cfg) as kb:
        gen = kb.trajectory_count(StoreId.GEN)
        edit = kb.trajectory_count(StoreId.EDIT)
        active = guidance_active(kb, cfg)
    _emit(
        {
            "gen": gen,
            "edit": edit,
            "active": active,
            "activation_threshold": cfg.activation_threshold,
        }
    )
    return 0


def cmd_memory_export(args: argparse.Namespace) -> int:
    settings = _settings(args)
    cfg = settings.workflow_config()
    _require_kb_dir(settings)
    store = StoreId.GEN if args.store == "gen" else StoreId.EDIT
    with _open_kb(settings, cfg) as kb:
        count = kb.export_trajectories(store, args.export_out)
    _emit({"store": store.value, "exported": count, "path": str(args.export_out)})
    return 0


# -- eval-retrieval ---------------------------------------------------------------


def _load_queries(path: Path) -> list[dict]:
    if not path.exists():
        raise CliError("MissingInput", f"query file {path} does not exist")
    queries = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "prompt" not in obj:
                raise CliError("BadInput", f"line {line_no} must carry a prompt")
            queries.append({"id": str(obj.get("id", line_no)), "prompt": str(obj["prompt"])})
    if not queries:
        raise CliError("BadInput", "query file is empty")
    return queries


def cmd_eval_retrieval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    cfg = settings.workflow_config()
    _require_kb_dir(settings)
    queries = _load_queries(Path(args.queries))
    backends = _backends(settings)

    with _open_kb(settings, cfg) as kb:
        if kb.trajectory_count(StoreId.GEN) == 0:
            raise CliError("NeedsTrajectories", "knowledge base holds no trajectories")
        per_query_means = []
        for query in queries:
            vec = embed_text(backends.embed, query["prompt"])
            hits = kb.retrieve_similar(StoreId.GEN, vec, cfg.retrieval_k)
            try:
                verdicts = judge_retrieval(
                    backends.chat, query["prompt"], hits, mode=args.mode,
                    retries=cfg.retries,
                )
            except SchemaViolation as exc:
                _emit({"id": query["id"], "error": "SchemaViolation", "message": str(exc)})
                continue
            scores = [v["overall_score"] for v in verdicts]
            mean = sum(scores) / len(scores)
            per_query_means.append(mean)
            _emit(
                {
                    "id": query["id"],
                    "mode": args.mode,
                    "k": cfg.retrieval_k,
                    "hits": len(hits),
                    "scores": scores,
                    "mean": mean,
                }
            )

    if per_query_means:
        _emit(
            {
                "aggregate": True,
                "mode": args.mode,
                "k": cfg.retrieval_k,
                "queries": len(per_query_means),
                "mean": sum(per_query_means) / len(per_query_means),
            }
        )
    return 0


# -- parser ---------------------------------------------------------------------


def _shared_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat TOML config file")
    shared.add_argument("--kb", help="knowledge base directory")
    shared.add_argument("--out", help="output directory for run manifests")
    shared.add_argument("--mock", action="store_const", const=True, default=None,
                        help="use the deterministic mock backends (no network)")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--tau", type=float, default=None, help="evaluation threshold")
    shared.add_argument("--max-edits", dest="max_edits", type=int, default=None)
    shared.add_argument("--k", type=int, default=None, help="retrieval size")
    shared.add_argument("--episode", default=None, help="episode label recorded per run")
    shared.add_argument("--concurrency", type=int, default=None)
    shared.add_argument("--retries", type=int, default=None)
    shared.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    shared.add_argument("--activation-threshold", dest="activation_threshold",
                        type=int, default=None)
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(
        prog="sidiff",
        description="Self-improving text-to-image agent workflow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", parents=[shared], help="run one prompt")
    run_p.add_argument("prompt")
    run_p.set_defaults(func=cmd_run)

    batch_p = sub.add_parser("batch", parents=[shared], help="run a prompt suite")
    batch_p.add_argument("input", help="JSONL file of {id, prompt, seed?}")
    batch_p.set_defaults(func=cmd_batch)

    memory_p = sub.add_parser("memory", help="inspect or export the knowledge base")
    memory_sub = memory_p.add_subparsers(dest="memory_command", required=True)
    stats_p = memory_sub.add_parser("stats", parents=[shared])
    stats_p.set_defaults(func=cmd_memory_stats)
    export_p = memory_sub.add_parser("export", parents=[shared])
    export_p.add_argument("--store", choices=["gen", "edit"], required=True)
    export_p.add_argument("--export-out", dest="export_out", required=True,
                          help="destination JSONL file")
    export_p.set_defaults(func=cmd_memory_export)

    eval_p = sub.add_parser(
        "eval-retrieval", parents=[shared], help="judge retrieval quality"
    )
    eval_p.add_argument("queries", help="JSONL file of {id, prompt}")
    eval_p.add_argument("--mode", choices=["group", "individual"], default="group")
    eval_p.set_defaults(func=cmd_eval_retrieval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.kind, str(exc))
        return exc.code
    except SidiffError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except ValueError as exc:
        _emit_error("ValueError", str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
