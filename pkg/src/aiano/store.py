"""Durable project/corpus/entry store with optimistic versioning.

Layout under the store root:

    projects/<project_id>/project.json
    projects/<project_id>/documents.json
    projects/<project_id>/entries/<entry_id>.json

Every file is written atomically (temp file + rename), so a killed process
leaves each entry at either its pre-write or post-write state. Entry writes
are compare-and-swap on the version counter, serialized per entry id;
provenance may only ever grow.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Optional

from . import entries as em
from .errors import (
    DocumentNotFound,
    EntryInvalid,
    EntryNotFound,
    ProjectNotFound,
    StoreUnavailable,
    VersionConflict,
)
from .projects import Project, parse_project, utc_now, validate_project


def _dump_json(payload: Any) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)


class Store:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        try:
            (self.root / "projects").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreUnavailable(f"cannot create store at {self.root}: {exc}")
        self._guard = threading.Lock()
        self._entry_locks: dict[tuple[str, str], threading.Lock] = {}
        self._project_locks: dict[str, threading.Lock] = {}
        self._project_cache: dict[str, Project] = {}
        # corpus module caches its search index here, keyed by project id
        self.index_cache: dict[str, tuple[int, Any]] = {}

    # --- low-level helpers ---

    def _project_dir(self, project_id: str) -> Path:
        return self.root / "projects" / project_id

    def _write_atomic(self, path: Path, payload: Any) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(_dump_json(payload))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _entry_lock(self, project_id: str, entry_id: str) -> threading.Lock:
        with self._guard:
            return self._entry_locks.setdefault((project_id, entry_id), threading.Lock())

    def project_lock(self, project_id: str) -> threading.Lock:
        with self._guard:
            return self._project_locks.setdefault(project_id, threading.Lock())

    # --- projects ---

    def save_project(self, project: Project) -> None:
        with self.project_lock(project.project_id):
            self._write_atomic(self._project_dir(project.project_id) / "project.json", project.to_dict())
            with self._guard:
                self._project_cache[project.project_id] = project

    def get_project(self, project_id: str) -> Project:
        with self._guard:
            cached = self._project_cache.get(project_id)
        if cached is not None:
            return cached
        path = self._project_dir(project_id) / "project.json"
        if not path.exists():
            raise ProjectNotFound(f"project {project_id!r} does not exist", project_id=project_id)
        project = parse_project(json.loads(path.read_text(encoding="utf-8")), keep_ids=True)
        with self._guard:
            self._project_cache[project_id] = project
        return project

    def replace_project(self, project: Project) -> None:
        """Whole-project replacement; definitions are otherwise immutable."""
        self.get_project(project.project_id)
        validate_project(project)
        self.save_project(project)

    def list_projects(self) -> list[str]:
        base = self.root / "projects"
        return sorted(p.name for p in base.iterdir() if (p / "project.json").exists())

    # --- documents ---

    def documents_path(self, project_id: str) -> Path:
        return self._project_dir(project_id) / "documents.json"

    def load_documents(self, project_id: str) -> dict[str, dict]:
        self.get_project(project_id)
        path = self.documents_path(project_id)
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    def save_documents(self, project_id: str, documents: dict[str, dict]) -> None:
        self._write_atomic(self.documents_path(project_id), documents)

    def documents_revision(self, project_id: str) -> int:
        """Monotonic token for index caching; changes whenever the file does."""
        path = self.documents_path(project_id)
        try:
            st = path.stat()
        except FileNotFoundError:
            return 0
        return st.st_mtime_ns ^ st.st_size

    def get_document_raw(self, project_id: str, document_id: str) -> dict:
        docs = self.load_documents(project_id)
        if document_id not in docs:
            raise DocumentNotFound(f"document {document_id!r} does not exist", document_id=document_id)
        return docs[document_id]

    def document_texts(self, project_id: str) -> dict[str, str]:
        project = self.get_project(project_id)
        body = project.body_field
        return {did: str(doc.get(body, "")) for did, doc in self.load_documents(project_id).items()}

    # --- entries ---

    def _entry_path(self, project_id: str, entry_id: str) -> Path:
        return self._project_dir(project_id) / "entries" / f"{entry_id}.json"

    def entry_exists(self, project_id: str, entry_id: str) -> bool:
        return self._entry_path(project_id, entry_id).exists()

    def get_entry(self, project_id: str, entry_id: str) -> em.AnnotationEntry:
        self.get_project(project_id)
        path = self._entry_path(project_id, entry_id)
        if not path.exists():
            raise EntryNotFound(f"entry {entry_id!r} does not exist", entry_id=entry_id)
        return em.parse_entry(json.loads(path.read_text(encoding="utf-8")))

    def upsert_entry(self, entry: em.AnnotationEntry, expected_version: int) -> int:
        """Compare-and-swap write; returns the new version.

        The stored provenance must be a prefix of the incoming provenance:
        events are appended, never rewritten or dropped.
        """
        project = self.get_project(entry.project_id)
        em.validate_entry(entry, project, self.document_texts(entry.project_id))
        with self._entry_lock(entry.project_id, entry.entry_id):
            path = self._entry_path(entry.project_id, entry.entry_id)
            stored = None
            if path.exists():
                stored = em.parse_entry(json.loads(path.read_text(encoding="utf-8")))
            stored_version = stored.version if stored else 0
            if expected_version != stored_version:
                raise VersionConflict(
                    f"expected version {expected_version}, stored version is {stored_version}",
                    stored_version=stored_version,
                )
            if stored is not None:
                stored_events = [e.to_dict() for e in stored.provenance]
                new_events = [e.to_dict() for e in entry.provenance]
                if new_events[:len(stored_events)] != stored_events:
                    raise EntryInvalid("provenance may only append to the stored event log")
            entry.version = stored_version + 1
            entry.updated_at = utc_now()
            # the brief project-lock section lets exports take a clean snapshot
            with self.project_lock(entry.project_id):
                self._write_atomic(path, entry.to_dict())
            return entry.version

    def put_entry_verbatim(self, entry: em.AnnotationEntry) -> None:
        """Write an entry exactly as given, keeping version/timestamps (import path)."""
        with self._entry_lock(entry.project_id, entry.entry_id):
            with self.project_lock(entry.project_id):
                self._write_atomic(self._entry_path(entry.project_id, entry.entry_id), entry.to_dict())

    def snapshot(self, project_id: str) -> tuple[Project, dict[str, dict], list[em.AnnotationEntry]]:
        """Project, documents, and entries read under the project lock, so a
        concurrent annotator can never produce a torn export."""
        with self.project_lock(project_id):
            project = self.get_project(project_id)
            documents = self.load_documents(project_id)
            entries = self.list_entries(project_id)
        return project, documents, entries

    def add_highlight(self, project_id: str, entry_id: str, highlight: em.Highlight,
                      expected_version: int, annotator_id: str = "annotator") -> int:
        """Append one highlight plus its provenance event, under version CAS."""
        project = self.get_project(project_id)
        entry = self.get_entry(project_id, entry_id)
        doc = self.get_document_raw(project_id, highlight.document_id)
        text = str(doc.get(project.body_field, ""))
        em.validate_highlight(highlight, text, {lv.level_id for lv in project.levels})
        if not highlight.text_snapshot:
            highlight.text_snapshot = text[highlight.start:highlight.end]
        entry.highlights.append(highlight)
        entry.provenance.append(em.ProvenanceEvent(
            at=utc_now(),
            actor=em.human_actor(annotator_id),
            action=em.ACTION_HIGHLIGHT_ADDED,
            payload={
                "highlight_id": highlight.highlight_id,
                "document_id": highlight.document_id,
                "level_id": highlight.level_id,
                "start": highlight.start,
                "end": highlight.end,
            },
        ))
        return self.upsert_entry(entry, expected_version)

    def list_entries(self, project_id: str, subject_id: Optional[str] = None,
                     has_block_value: Optional[str] = None) -> list[em.AnnotationEntry]:
        """Entries newest-first (updated_at desc, entry_id asc on ties)."""
        self.get_project(project_id)
        base = self._project_dir(project_id) / "entries"
        out: list[em.AnnotationEntry] = []
        if base.exists():
            for path in base.glob("*.json"):
                entry = em.parse_entry(json.loads(path.read_text(encoding="utf-8")))
                if subject_id is not None and entry.subject_id != subject_id:
                    continue
                if has_block_value is not None:
                    result = entry.block_values.get(has_block_value)
                    if result is None or not result.value:
                        continue
                out.append(entry)
        out.sort(key=lambda e: e.entry_id)
        out.sort(key=lambda e: e.updated_at, reverse=True)
        return out

    # --- integrity audit ---

    def audit(self, project_id: str) -> list[dict]:
        """Full-store snapshot/provenance audit; empty list means healthy."""
        project = self.get_project(project_id)
        texts = self.document_texts(project_id)
        violations: list[dict] = []
        for entry in self.list_entries(project_id):
            for h in entry.highlights:
                if h.document_id not in texts:
                    violations.append({"entry_id": entry.entry_id, "highlight_id": h.highlight_id,
                                       "code": "UnknownDocument", "document_id": h.document_id})
                    continue
                text = texts[h.document_id]
                if not (0 <= h.start < h.end <= len(text)):
                    violations.append({"entry_id": entry.entry_id, "highlight_id": h.highlight_id,
                                       "code": "SpanOutOfBounds"})
                elif text[h.start:h.end] != h.text_snapshot:
                    violations.append({"entry_id": entry.entry_id, "highlight_id": h.highlight_id,
                                       "code": "SnapshotMismatch"})
            for ev in entry.provenance:
                if ev.action == em.ACTION_BLOCK_GENERATED:
                    if not ev.actor.get("model_id") or not ev.payload.get("prompt_fingerprint"):
                        violations.append({"entry_id": entry.entry_id, "code": "IncompleteGeneration"})
        return violations
