"""HTTP surface binding projects, corpus, blocks, store, evaluation, export.

Every module error maps to exactly one HTTP status family (validation 422,
not-found 404, conflict 409, provider 502, everything else 500); every
response carries an X-Request-Id; every mutation returns the new version.
"""

from __future__ import annotations

import logging
import uuid
from typing import Optional

from fastapi import Body, FastAPI, Header, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import blocks, corpus, entries as em, evaluation, export as export_mod
from .errors import (
    AianoError,
    ConflictError,
    NotFoundError,
    ProviderError,
    ProviderFailure,
    UnknownBlock,
    ValidationError,
)
from .llm import HttpProvider, MockProvider
from .projects import create_project, new_id, parse_project, utc_now
from .store import Store

logger = logging.getLogger("aiano.api")


def status_for(exc: AianoError) -> int:
    if isinstance(exc, ValidationError):
        return 422
    if isinstance(exc, NotFoundError):
        return 404
    if isinstance(exc, ConflictError):
        return 409
    if isinstance(exc, ProviderFailure):
        return 502
    return 500


def _require_version(if_match: Optional[str]) -> int:
    if if_match is None:
        raise ValidationError("If-Match header with the expected version is required")
    try:
        return int(if_match.strip().strip('"'))
    except ValueError:
        raise ValidationError(f"If-Match header {if_match!r} is not an integer version")


def create_app(store: Store, mock_llm: bool = False,
               cors_origins: Optional[list[str]] = None,
               auth_token: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="aiano", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.mock_llm = mock_llm
    app.state.mock_provider = MockProvider()

    if cors_origins:
        app.add_middleware(
            CORSMiddleware, allow_origins=cors_origins,
            allow_methods=["*"], allow_headers=["*"], expose_headers=["X-Request-Id"],
        )

    @app.middleware("http")
    async def request_id(request: Request, call_next):
        rid = request.headers.get("X-Request-Id") or uuid.uuid4().hex
        if auth_token and request.url.path != "/health":
            if request.headers.get("Authorization") != f"Bearer {auth_token}":
                response = JSONResponse(status_code=401, content={
                    "code": "Unauthorized", "message": "bearer token required"})
                response.headers["X-Request-Id"] = rid
                return response
        response = await call_next(request)
        response.headers["X-Request-Id"] = rid
        return response

    @app.exception_handler(AianoError)
    async def aiano_error(request: Request, exc: AianoError):
        status = status_for(exc)
        logger.info("%s %s -> %d %s", request.method, request.url.path, status, exc.code)
        return JSONResponse(status_code=status, content=exc.to_dict())

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        details = [
            {"loc": [str(p) for p in err.get("loc", [])], "msg": str(err.get("msg", ""))}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=422, content={
            "code": "MalformedBody",
            "message": "request body failed validation",
            "details": {"errors": details},
        })

    def _provider(project):
        if app.state.mock_llm:
            return app.state.mock_provider
        if project.provider is None:
            raise ProviderError("project has no provider configured")
        return HttpProvider(project.provider)

    # --- projects ---

    @app.post("/projects", status_code=201)
    def post_project(payload: dict = Body(...)):
        parsed = parse_project(payload)
        project = create_project(
            store, parsed.meta, parsed.input_schema, parsed.output_schema,
            parsed.levels, parsed.blocks, provider=parsed.provider,
            body_field=parsed.body_field,
        )
        return project.to_dict()

    @app.get("/projects/{project_id}")
    def get_project(project_id: str):
        return store.get_project(project_id).to_dict()

    # --- corpus ---

    @app.post("/projects/{project_id}/documents")
    def post_documents(project_id: str, payload: list = Body(...)):
        return corpus.ingest_documents(store, project_id, payload).to_dict()

    @app.get("/projects/{project_id}/documents/{document_id}")
    def get_document(project_id: str, document_id: str):
        return corpus.get_document(store, project_id, document_id).to_dict()

    @app.get("/projects/{project_id}/search")
    def search(project_id: str, q: str = Query(...), limit: int = Query(10)):
        return [hit.to_dict() for hit in corpus.search_corpus(store, project_id, q, limit)]

    @app.get("/projects/{project_id}/documents/{document_id}/search")
    def search_in_document(project_id: str, document_id: str, q: str = Query(...)):
        return [span.to_dict() for span in corpus.search_within(store, project_id, document_id, q)]

    # --- entries ---

    @app.post("/projects/{project_id}/entries", status_code=201)
    def post_entry(project_id: str, payload: dict = Body(...)):
        store.get_project(project_id)
        subject_id = str(payload.get("subject_id", ""))
        entry = em.AnnotationEntry(
            entry_id=str(payload.get("entry_id") or new_id()),
            project_id=project_id,
            subject_id=subject_id,
        )
        store.upsert_entry(entry, expected_version=0)
        return entry.to_dict()

    @app.get("/projects/{project_id}/entries")
    def list_entries(project_id: str, subject_id: Optional[str] = None,
                     has_block_value: Optional[str] = None):
        return [e.to_dict() for e in store.list_entries(project_id, subject_id, has_block_value)]

    @app.get("/projects/{project_id}/entries/{entry_id}")
    def get_entry(project_id: str, entry_id: str):
        return store.get_entry(project_id, entry_id).to_dict()

    @app.put("/projects/{project_id}/entries/{entry_id}")
    def put_entry(project_id: str, entry_id: str, payload: dict = Body(...),
                  if_match: Optional[str] = Header(None, alias="If-Match")):
        expected = _require_version(if_match)
        project = store.get_project(project_id)
        entry = store.get_entry(project_id, entry_id)
        annotator = str(payload.get("annotator_id", "annotator"))
        _apply_entry_update(store, project, entry, payload, annotator)
        store.upsert_entry(entry, expected)
        return entry.to_dict()

    @app.post("/projects/{project_id}/entries/{entry_id}/highlights")
    def post_highlight(project_id: str, entry_id: str, payload: dict = Body(...),
                       if_match: Optional[str] = Header(None, alias="If-Match")):
        expected = _require_version(if_match)
        highlight = em.parse_highlight(payload)
        if not highlight.highlight_id:
            highlight.highlight_id = new_id()
        annotator = str(payload.get("annotator_id", "annotator"))
        store.add_highlight(project_id, entry_id, highlight, expected, annotator)
        return store.get_entry(project_id, entry_id).to_dict()

    @app.post("/projects/{project_id}/entries/{entry_id}/blocks/{block_id}/generate")
    def generate(project_id: str, entry_id: str, block_id: str,
                 payload: dict = Body(default={}),
                 if_match: Optional[str] = Header(None, alias="If-Match")):
        expected = _require_version(if_match)
        project = store.get_project(project_id)
        block = project.get_block(block_id)
        if block is None:
            raise UnknownBlock(f"block {block_id!r} does not exist", block_id=block_id)
        entry = store.get_entry(project_id, entry_id)
        document_ids = payload.get("document_ids")
        if document_ids is not None:
            document_ids = [str(d) for d in document_ids]
        ctx = blocks.build_entry_context(store, project, entry, document_ids)
        result = blocks.execute_block(block, ctx, _provider(project))
        if result.origin == em.ORIGIN_HUMAN:
            # plain blocks generate nothing; no mutation, version unchanged
            return {"result": result.to_dict(), "version": entry.version}
        entry.block_values[block_id] = result
        entry.provenance.append(em.ProvenanceEvent(
            at=utc_now(),
            actor=em.ai_actor(result.model_id or ""),
            action=em.ACTION_BLOCK_GENERATED,
            payload={"block_id": block_id, "prompt_fingerprint": result.prompt_fingerprint},
        ))
        version = store.upsert_entry(entry, expected)
        return {"result": result.to_dict(), "version": version}

    # --- export / import / evaluate ---

    @app.get("/projects/{project_id}/export/dataset")
    def export_dataset(project_id: str, question: str = Query(...), answer: str = Query(...)):
        records, _report = export_mod.export_dataset(store, project_id, question, answer)
        return Response(content=export_mod.canonical_json_bytes(records),
                        media_type="application/json")

    @app.get("/projects/{project_id}/export/archive")
    def export_archive(project_id: str, include_documents: bool = False,
                       include_entries: bool = False):
        archive = export_mod.export_project(store, project_id, include_documents, include_entries)
        return Response(
            content=export_mod.canonical_json_bytes(archive),
            media_type="application/json",
            headers={"Content-Disposition": f'attachment; filename="{project_id}.aiano"'},
        )

    @app.post("/projects/import", status_code=201)
    def import_archive(payload: dict = Body(...)):
        return export_mod.import_project(store, payload).to_dict()

    @app.post("/projects/{project_id}/evaluate")
    def evaluate(project_id: str, payload: dict = Body(...)):
        store.get_project(project_id)
        gold = evaluation.parse_gold_spec(payload)
        return evaluation.evaluate_project(store, project_id, gold)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    return app


def _apply_entry_update(store: Store, project, entry: em.AnnotationEntry,
                        payload: dict, annotator: str) -> None:
    """Merge a PUT body into the stored entry, appending provenance deltas."""
    now = utc_now()
    if "subject_id" in payload:
        entry.subject_id = str(payload["subject_id"])

    if "highlights" in payload:
        raw = payload["highlights"]
        if not isinstance(raw, list):
            raise ValidationError("highlights must be an array")
        texts = store.document_texts(project.project_id)
        new_highlights: list[em.Highlight] = []
        for item in raw:
            h = em.parse_highlight(item)
            if not h.highlight_id:
                h.highlight_id = new_id()
            if not h.text_snapshot:
                h.text_snapshot = texts.get(h.document_id, "")[h.start:h.end]
            new_highlights.append(h)
        old_by_id = {h.highlight_id: h for h in entry.highlights}
        new_by_id = {h.highlight_id: h for h in new_highlights}
        for hid in old_by_id:
            if hid not in new_by_id or new_by_id[hid].to_dict() != old_by_id[hid].to_dict():
                entry.provenance.append(em.ProvenanceEvent(
                    at=now, actor=em.human_actor(annotator),
                    action=em.ACTION_HIGHLIGHT_REMOVED, payload={"highlight_id": hid}))
        for hid, h in new_by_id.items():
            if hid not in old_by_id or old_by_id[hid].to_dict() != h.to_dict():
                entry.provenance.append(em.ProvenanceEvent(
                    at=now, actor=em.human_actor(annotator),
                    action=em.ACTION_HIGHLIGHT_ADDED,
                    payload={"highlight_id": hid, "document_id": h.document_id,
                             "level_id": h.level_id, "start": h.start, "end": h.end}))
        entry.highlights = new_highlights

    if "block_values" in payload:
        raw_values = payload["block_values"]
        if not isinstance(raw_values, dict):
            raise ValidationError("block_values must be an object")
        for bid, raw_value in raw_values.items():
            bid = str(bid)
            text = str(raw_value.get("value", "")) if isinstance(raw_value, dict) else str(raw_value)
            previous = entry.block_values.get(bid)
            result = blocks.human_override(previous, bid, text)
            if previous is None or result.to_dict() != previous.to_dict():
                entry.block_values[bid] = result
                entry.provenance.append(em.ProvenanceEvent(
                    at=now, actor=em.human_actor(annotator),
                    action=em.ACTION_BLOCK_EDITED, payload={"block_id": bid}))
