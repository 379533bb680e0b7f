"""Headless administration: create projects, ingest corpora, export, evaluate.

Exit codes: 0 success, 1 validation failure, 2 I/O or provider failure.
Every failure prints one JSON line to stderr so scripts can parse it.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

from . import corpus, evaluation, export as export_mod
from .errors import (
    AianoError,
    BindFailed,
    ProviderFailure,
    StoreUnavailable,
)
from .projects import create_project, parse_project
from .store import Store


def _print_json(payload) -> None:
    print(json.dumps(payload, ensure_ascii=False, sort_keys=True))


def _fail(code: str, message: str, exit_code: int) -> int:
    print(json.dumps({"code": code, "message": message}, ensure_ascii=False), file=sys.stderr)
    return exit_code


def _load_json_file(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aiano", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--store", required=True, help="store directory")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--mock-llm", action="store_true",
                       help="answer generations with the deterministic mock")
    serve.add_argument("--cors-origin", action="append", default=None,
                       help="allowed UI origin (repeatable; default *)")
    serve.add_argument("--auth-token", default=None,
                       help="require this bearer token on every request")

    project = sub.add_parser("project", help="project administration")
    psub = project.add_subparsers(dest="project_command", required=True)
    pc = psub.add_parser("create", help="create a project from a JSON definition")
    pc.add_argument("--store", required=True)
    pc.add_argument("--file", required=True, help="project definition JSON")
    pe = psub.add_parser("export", help="write a .aiano archive")
    pe.add_argument("--store", required=True)
    pe.add_argument("--project", required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument("--include-documents", action="store_true")
    pe.add_argument("--include-entries", action="store_true")
    pi = psub.add_parser("import", help="recreate a project from a .aiano archive")
    pi.add_argument("--store", required=True)
    pi.add_argument("--file", required=True)

    docs = sub.add_parser("docs", help="corpus administration")
    dsub = docs.add_subparsers(dest="docs_command", required=True)
    di = dsub.add_parser("ingest", help="ingest a JSON array of documents")
    di.add_argument("--store", required=True)
    di.add_argument("--project", required=True)
    di.add_argument("--file", required=True)

    dataset = sub.add_parser("dataset", help="dataset export")
    dssub = dataset.add_subparsers(dest="dataset_command", required=True)
    de = dssub.add_parser("export", help="write the dataset JSON")
    de.add_argument("--store", required=True)
    de.add_argument("--project", required=True)
    de.add_argument("--question-block", required=True)
    de.add_argument("--answer-block", required=True)
    de.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="retrieval metrics against a gold file")
    ev.add_argument("--store", required=True)
    ev.add_argument("--project", required=True)
    ev.add_argument("--gold", required=True, help="JSON object {question_id: [document_id,...]}")

    return parser


def _cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    store = Store(args.store)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((args.host, args.port))
    except OSError as exc:
        raise BindFailed(f"cannot bind {args.host}:{args.port}: {exc}")
    finally:
        probe.close()
    app = create_app(store, mock_llm=args.mock_llm,
                     cors_origins=args.cors_origin or ["*"],
                     auth_token=args.auth_token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_project_create(args) -> int:
    store = Store(args.store)
    parsed = parse_project(_load_json_file(args.file))
    project = create_project(
        store, parsed.meta, parsed.input_schema, parsed.output_schema,
        parsed.levels, parsed.blocks, provider=parsed.provider,
        body_field=parsed.body_field,
    )
    print(project.project_id)
    return 0


def _cmd_project_export(args) -> int:
    store = Store(args.store)
    archive = export_mod.export_project(
        store, args.project,
        include_documents=args.include_documents,
        include_entries=args.include_entries,
    )
    Path(args.out).write_bytes(export_mod.canonical_json_bytes(archive))
    _print_json({
        "path": args.out,
        "documents": len(archive.get("documents", {})),
        "entries": len(archive.get("entries", [])),
    })
    return 0


def _cmd_project_import(args) -> int:
    store = Store(args.store)
    project = export_mod.import_project(store, _load_json_file(args.file))
    print(project.project_id)
    return 0


def _cmd_docs_ingest(args) -> int:
    store = Store(args.store)
    report = corpus.ingest_documents(store, args.project, _load_json_file(args.file))
    _print_json(report.to_dict())
    return 1 if report.rejected else 0


def _cmd_dataset_export(args) -> int:
    store = Store(args.store)
    records, report = export_mod.export_dataset(
        store, args.project, args.question_block, args.answer_block)
    Path(args.out).write_bytes(export_mod.canonical_json_bytes(records))
    _print_json(report)
    return 0


def _cmd_evaluate(args) -> int:
    store = Store(args.store)
    gold = evaluation.parse_gold_spec(_load_json_file(args.gold))
    _print_json(evaluation.evaluate_project(store, args.project, gold))
    return 0


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "project":
            if args.project_command == "create":
                return _cmd_project_create(args)
            if args.project_command == "export":
                return _cmd_project_export(args)
            return _cmd_project_import(args)
        if args.command == "docs":
            return _cmd_docs_ingest(args)
        if args.command == "dataset":
            return _cmd_dataset_export(args)
        return _cmd_evaluate(args)
    except (ProviderFailure, StoreUnavailable, BindFailed) as exc:
        return _fail(exc.code, exc.message, 2)
    except AianoError as exc:
        return _fail(exc.code, exc.message, 1)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)


def main() -> None:
    sys.exit(run())
