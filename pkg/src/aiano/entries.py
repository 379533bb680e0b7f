"""Annotation data model: highlights, block values, provenance, entries.

One entry is one dataset row (a question instance): its leveled highlights,
the current block values with their origin, and an append-only provenance
log. Validation here is what the store enforces before anything persists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import EntryInvalid, SnapshotMismatch, SpanOutOfBounds, UnknownLevel
from .projects import Project

ORIGIN_HUMAN = "human"
ORIGIN_AI = "ai_generated"
ORIGIN_AI_EDITED = "ai_edited"
ORIGINS = (ORIGIN_HUMAN, ORIGIN_AI, ORIGIN_AI_EDITED)

ACTION_HIGHLIGHT_ADDED = "highlight_added"
ACTION_HIGHLIGHT_REMOVED = "highlight_removed"
ACTION_BLOCK_GENERATED = "block_generated"
ACTION_BLOCK_EDITED = "block_edited"


def human_actor(annotator_id: str) -> dict:
    return {"type": "human", "annotator_id": annotator_id}


def ai_actor(model_id: str) -> dict:
    return {"type": "ai", "model_id": model_id}


@dataclass
class Highlight:
    highlight_id: str
    document_id: str
    level_id: str
    start: int
    end: int
    text_snapshot: str

    def to_dict(self) -> dict:
        return {
            "highlight_id": self.highlight_id,
            "document_id": self.document_id,
            "level_id": self.level_id,
            "start": self.start,
            "end": self.end,
            "text_snapshot": self.text_snapshot,
        }


@dataclass
class BlockResult:
    block_id: str
    value: str
    origin: str = ORIGIN_HUMAN
    model_id: Optional[str] = None
    prompt_fingerprint: Optional[str] = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"block_id": self.block_id, "value": self.value, "origin": self.origin}
        if self.model_id is not None:
            out["model_id"] = self.model_id
        if self.prompt_fingerprint is not None:
            out["prompt_fingerprint"] = self.prompt_fingerprint
        return out


@dataclass
class ProvenanceEvent:
    at: str  # UTC ISO-8601
    actor: dict  # human_actor(...) | ai_actor(...)
    action: str
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"at": self.at, "actor": self.actor, "action": self.action, "payload": self.payload}


@dataclass
class AnnotationEntry:
    entry_id: str
    project_id: str
    subject_id: str
    highlights: list[Highlight] = field(default_factory=list)
    block_values: dict[str, BlockResult] = field(default_factory=dict)
    provenance: list[ProvenanceEvent] = field(default_factory=list)
    version: int = 0
    updated_at: str = ""

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "project_id": self.project_id,
            "subject_id": self.subject_id,
            "highlights": [h.to_dict() for h in self.highlights],
            "block_values": {bid: r.to_dict() for bid, r in sorted(self.block_values.items())},
            "provenance": [e.to_dict() for e in self.provenance],
            "version": self.version,
            "updated_at": self.updated_at,
        }


def parse_highlight(raw: dict) -> Highlight:
    if not isinstance(raw, dict):
        raise EntryInvalid("highlight must be an object")
    try:
        start, end = int(raw["start"]), int(raw["end"])
    except (KeyError, TypeError, ValueError):
        raise EntryInvalid("highlight needs integer start and end offsets")
    return Highlight(
        highlight_id=str(raw.get("highlight_id", "")),
        document_id=str(raw.get("document_id", "")),
        level_id=str(raw.get("level_id", "")),
        start=start,
        end=end,
        text_snapshot=str(raw.get("text_snapshot", "")),
    )


def parse_block_result(block_id: str, raw: dict) -> BlockResult:
    if not isinstance(raw, dict):
        raise EntryInvalid(f"block value for {block_id!r} must be an object")
    origin = str(raw.get("origin", ORIGIN_HUMAN))
    if origin not in ORIGINS:
        raise EntryInvalid(f"unknown block value origin {origin!r}", block_id=block_id)
    return BlockResult(
        block_id=block_id,
        value=str(raw.get("value", "")),
        origin=origin,
        model_id=raw.get("model_id"),
        prompt_fingerprint=raw.get("prompt_fingerprint"),
    )


def parse_event(raw: dict) -> ProvenanceEvent:
    if not isinstance(raw, dict):
        raise EntryInvalid("provenance event must be an object")
    return ProvenanceEvent(
        at=str(raw.get("at", "")),
        actor=dict(raw.get("actor", {})),
        action=str(raw.get("action", "")),
        payload=dict(raw.get("payload", {})),
    )


def parse_entry(raw: dict) -> AnnotationEntry:
    if not isinstance(raw, dict):
        raise EntryInvalid("entry must be a JSON object")
    block_values = raw.get("block_values", {})
    if not isinstance(block_values, dict):
        raise EntryInvalid("block_values must be an object")
    return AnnotationEntry(
        entry_id=str(raw.get("entry_id", "")),
        project_id=str(raw.get("project_id", "")),
        subject_id=str(raw.get("subject_id", "")),
        highlights=[parse_highlight(h) for h in raw.get("highlights", [])],
        block_values={str(bid): parse_block_result(str(bid), r) for bid, r in block_values.items()},
        provenance=[parse_event(e) for e in raw.get("provenance", [])],
        version=int(raw.get("version", 0)),
        updated_at=str(raw.get("updated_at", "")),
    )


def validate_highlight(h: Highlight, document_text: str, level_ids: set[str]) -> None:
    """Span bounds, snapshot fidelity, and level existence against live text."""
    if h.level_id not in level_ids:
        raise UnknownLevel(f"highlight level {h.level_id!r} does not exist", level_id=h.level_id)
    if not (0 <= h.start < h.end <= len(document_text)):
        raise SpanOutOfBounds(
            f"span [{h.start},{h.end}) out of bounds for document of length {len(document_text)}",
            start=h.start, end=h.end, length=len(document_text),
        )
    live = document_text[h.start:h.end]
    if h.text_snapshot and h.text_snapshot != live:
        raise SnapshotMismatch(
            f"snapshot differs from live document text at [{h.start},{h.end})",
            document_id=h.document_id,
        )


def validate_block_result(result: BlockResult) -> None:
    if result.origin == ORIGIN_HUMAN:
        if result.model_id is not None or result.prompt_fingerprint is not None:
            raise EntryInvalid(
                f"human block value {result.block_id!r} must not carry model metadata",
                block_id=result.block_id,
            )
    else:
        if not result.model_id or not result.prompt_fingerprint:
            raise EntryInvalid(
                f"AI block value {result.block_id!r} needs model_id and prompt_fingerprint",
                block_id=result.block_id,
            )


def validate_entry(entry: AnnotationEntry, project: Project,
                   document_texts: dict[str, str]) -> None:
    """Full entry check against its project and the live corpus texts."""
    if not entry.entry_id:
        raise EntryInvalid("entry_id must be nonempty")
    if not entry.subject_id:
        raise EntryInvalid("subject_id must be nonempty")
    block_ids = {b.block_id for b in project.blocks}
    for bid, result in entry.block_values.items():
        if bid not in block_ids:
            raise EntryInvalid(f"block value references unknown block {bid!r}", block_id=bid)
        validate_block_result(result)
    level_ids = {lv.level_id for lv in project.levels}
    for h in entry.highlights:
        if h.document_id not in document_texts:
            raise EntryInvalid(f"highlight references unknown document {h.document_id!r}",
                               document_id=h.document_id)
        validate_highlight(h, document_texts[h.document_id], level_ids)
    for ev in entry.provenance:
        if ev.action == ACTION_BLOCK_GENERATED:
            if not ev.actor.get("model_id") or not ev.payload.get("prompt_fingerprint"):
                raise EntryInvalid("block_generated events need model_id and prompt_fingerprint")
