"""Dataset export and the single-file .aiano project container.

The dataset is a JSON array of question/answer/passage records with IDs and
span positions. The .aiano archive is one UTF-8 JSON file carrying the full
project definition and, opt-in, the corpus and the annotation entries. Both
serializations use sorted keys so repeated exports are byte-identical and
diffable. Secrets never enter either file: provider configs carry only the
name of the environment variable holding the key.
"""

from __future__ import annotations

import json
from typing import Any, Optional

from . import corpus, entries as em
from .errors import (
    NoEntries,
    UnknownBlock,
    UnsupportedVersion,
    ValidationError,
    ValidationFailed,
)
from .projects import Project, ProjectMeta, create_project, parse_project, utc_now
from .store import Store

FORMAT_VERSION = "1"
ARCHIVE_EXTENSION = ".aiano"


def canonical_json_bytes(payload: Any) -> bytes:
    return (json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n").encode("utf-8")


def export_dataset(store: Store, project_id: str, question_block_id: str,
                   answer_block_id: str) -> tuple[list[dict], dict]:
    """Build the dataset records plus an export report.

    One record per entry with a nonempty question value; passages ordered by
    (document_id, start); records ordered by entry_id. Entries with an empty
    question are skipped and listed in the report instead of failing the run.
    """
    project, documents, all_entries = store.snapshot(project_id)
    for block_id in (question_block_id, answer_block_id):
        if project.get_block(block_id) is None:
            raise UnknownBlock(f"block {block_id!r} does not exist", block_id=block_id)
    if not all_entries:
        raise NoEntries(f"project {project_id!r} has no entries")

    level_labels = {lv.level_id: lv.label for lv in project.levels}
    body = project.body_field
    records: list[dict] = []
    skipped: list[str] = []
    for entry in sorted(all_entries, key=lambda e: e.entry_id):
        question = entry.block_values.get(question_block_id)
        if question is None or not question.value:
            skipped.append(entry.entry_id)
            continue
        answer = entry.block_values.get(answer_block_id)
        passages = []
        for h in sorted(entry.highlights, key=lambda h: (h.document_id, h.start)):
            text = str(documents.get(h.document_id, {}).get(body, ""))[h.start:h.end]
            if text != h.text_snapshot:
                raise ValidationFailed(
                    f"passage text for highlight {h.highlight_id!r} no longer matches the document",
                    entry_id=entry.entry_id, highlight_id=h.highlight_id,
                )
            passages.append({
                "document_id": h.document_id,
                "start": h.start,
                "end": h.end,
                "level_label": level_labels.get(h.level_id, h.level_id),
                "text": text,
            })
        summary: dict[str, Any] = {"answer_origin": answer.origin if answer else em.ORIGIN_HUMAN}
        if answer and answer.model_id:
            summary["model_id"] = answer.model_id
        generated_at = _latest_generation(entry, answer_block_id)
        if generated_at:
            summary["generated_at"] = generated_at
        records.append({
            "entry_id": entry.entry_id,
            "subject_id": entry.subject_id,
            "question": question.value,
            "answer": answer.value if answer else "",
            "passages": passages,
            "provenance_summary": summary,
        })
    report = {"records": len(records), "skipped": skipped}
    return records, report


def _latest_generation(entry: em.AnnotationEntry, block_id: str) -> Optional[str]:
    stamp = None
    for ev in entry.provenance:
        if ev.action == em.ACTION_BLOCK_GENERATED and ev.payload.get("block_id") == block_id:
            stamp = ev.at
    return stamp


def export_project(store: Store, project_id: str, include_documents: bool = False,
                   include_entries: bool = False) -> dict:
    """Assemble the .aiano archive as a plain JSON object."""
    project, documents, all_entries = store.snapshot(project_id)
    archive: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "project": project.to_dict(),
    }
    if include_documents:
        archive["documents"] = documents
    if include_entries:
        archive["entries"] = [e.to_dict() for e in sorted(all_entries, key=lambda e: e.entry_id)]
    return archive


def import_project(store: Store, archive: dict) -> Project:
    """Recreate a project from an archive under a fresh project id.

    Block/level/document/entry ids are preserved; everything is re-validated
    through the same paths used at creation and ingest time, so a corrupt
    archive cannot smuggle in an invalid project.
    """
    if not isinstance(archive, dict):
        raise ValidationFailed("archive must be a JSON object")
    version = str(archive.get("format_version", ""))
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"archive format_version {version!r} is not supported",
                                 format_version=version)
    raw_project = archive.get("project")
    if not isinstance(raw_project, dict):
        raise ValidationFailed("archive has no project section")

    try:
        parsed = parse_project(raw_project, keep_ids=True)
        project = create_project(
            store,
            meta=ProjectMeta(
                project_id="",  # fresh id; created_at reset below too
                name=parsed.meta.name,
                description=parsed.meta.description,
                tags=parsed.meta.tags,
                created_at=utc_now(),
            ),
            input_schema=parsed.input_schema,
            output_schema=parsed.output_schema,
            levels=parsed.levels,
            blocks=parsed.blocks,
            provider=parsed.provider,
            body_field=parsed.body_field,
        )
    except ValidationError as exc:
        raise ValidationFailed(exc.message, cause=exc.code, **exc.details)

    documents = archive.get("documents")
    if documents is not None:
        if not isinstance(documents, dict):
            raise ValidationFailed("archive documents section must be an object")
        report = corpus.ingest_documents(store, project.project_id, list(documents.values()))
        if report.rejected:
            raise ValidationFailed("archive contains invalid documents",
                                   rejected=report.rejected)

    raw_entries = archive.get("entries")
    if raw_entries is not None:
        if not isinstance(raw_entries, list):
            raise ValidationFailed("archive entries section must be an array")
        texts = store.document_texts(project.project_id)
        for raw in raw_entries:
            try:
                entry = em.parse_entry(raw)
                entry.project_id = project.project_id
                em.validate_entry(entry, project, texts)
            except ValidationError as exc:
                raise ValidationFailed(exc.message, cause=exc.code, **exc.details)
            store.put_entry_verbatim(entry)
    return project
