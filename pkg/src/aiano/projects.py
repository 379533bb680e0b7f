"""Project definitions: metadata, schemas, annotation levels, and the block graph.

A project is the unit of configuration and export. Everything here is
validated at creation time; a stored project always satisfies its invariants.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Optional

from .errors import (
    BlockGraphInvalid,
    BlockInvalid,
    DuplicateLevelLabel,
    LevelInvalid,
    SchemaInvalid,
    ValidationError,
)
from .llm import ProviderConfig

FIELD_KINDS = ("string", "number", "boolean", "string-list", "object")
MANDATORY_INPUT_FIELDS = ("document_id", "subject_id")
ALL_LEVELS = "all"  # sentinel for Highlights sources spanning every level

_FIELD_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_HEX_COLOR_RE = re.compile(r"#[0-9a-fA-F]{6}\Z")

# cycled by level ordinal when no color is given
DEFAULT_PALETTE = (
    "#ffd54f", "#81c784", "#64b5f6", "#e57373",
    "#ba68c8", "#4db6ac", "#ffb74d", "#a1887f",
)


class BlockMode(str, Enum):
    PLAIN = "plain"
    AI_SOLO = "ai_solo"
    COLLABORATIVE = "collaborative"


class SourceKind(str, Enum):
    SYSTEM_PROMPT = "system_prompt"
    BLOCK_REF = "block_ref"
    FIELD = "field"
    HIGHLIGHTS = "highlights"
    DOCUMENT_TEXT = "document_text"


@dataclass(frozen=True)
class InputSource:
    """One declared input of a block; payload depends on ``kind``."""

    kind: SourceKind
    block_id: Optional[str] = None
    field_name: Optional[str] = None
    level_id: Optional[str] = None  # concrete level id or ALL_LEVELS

    @staticmethod
    def system_prompt() -> "InputSource":
        return InputSource(SourceKind.SYSTEM_PROMPT)

    @staticmethod
    def block_ref(block_id: str) -> "InputSource":
        return InputSource(SourceKind.BLOCK_REF, block_id=block_id)

    @staticmethod
    def field(field_name: str) -> "InputSource":
        return InputSource(SourceKind.FIELD, field_name=field_name)

    @staticmethod
    def highlights(level_id: str = ALL_LEVELS) -> "InputSource":
        return InputSource(SourceKind.HIGHLIGHTS, level_id=level_id)

    @staticmethod
    def document_text() -> "InputSource":
        return InputSource(SourceKind.DOCUMENT_TEXT)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.block_id is not None:
            out["block_id"] = self.block_id
        if self.field_name is not None:
            out["field_name"] = self.field_name
        if self.level_id is not None:
            out["level_id"] = self.level_id
        return out


@dataclass
class FieldDef:
    name: str
    kind: str = "string"
    required: bool = False

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "required": self.required}


@dataclass
class SchemaDef:
    fields: list[FieldDef]
    role: str = "input"  # "input" | "output"

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def get_field(self, name: str) -> Optional[FieldDef]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def to_dict(self) -> dict:
        return {"role": self.role, "fields": [f.to_dict() for f in self.fields]}


@dataclass
class AnnotationLevel:
    level_id: str
    label: str
    color: str = ""
    ordinal: int = 0

    def to_dict(self) -> dict:
        return {
            "level_id": self.level_id,
            "label": self.label,
            "color": self.color,
            "ordinal": self.ordinal,
        }


@dataclass
class GenerationParams:
    temperature: float = 0.2
    max_tokens: int = 512

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}


@dataclass
class BlockDef:
    block_id: str
    name: str
    mode: BlockMode
    system_prompt: str = ""
    input_sources: list[InputSource] = field(default_factory=list)
    display_order: int = 0
    params: GenerationParams = field(default_factory=GenerationParams)

    def to_dict(self) -> dict:
        return {
            "block_id": self.block_id,
            "name": self.name,
            "mode": self.mode.value,
            "system_prompt": self.system_prompt,
            "input_sources": [s.to_dict() for s in self.input_sources],
            "display_order": self.display_order,
            "params": self.params.to_dict(),
        }


@dataclass
class ProjectMeta:
    project_id: str = ""
    name: str = ""
    description: str = ""
    tags: list[str] = field(default_factory=list)
    created_at: str = ""  # UTC ISO-8601


@dataclass
class Project:
    meta: ProjectMeta
    input_schema: SchemaDef
    output_schema: SchemaDef
    levels: list[AnnotationLevel] = field(default_factory=list)
    blocks: list[BlockDef] = field(default_factory=list)
    provider: Optional[ProviderConfig] = None
    body_field: str = "text"

    @property
    def project_id(self) -> str:
        return self.meta.project_id

    def get_block(self, block_id: str) -> Optional[BlockDef]:
        for b in self.blocks:
            if b.block_id == block_id:
                return b
        return None

    def get_level(self, level_id: str) -> Optional[AnnotationLevel]:
        for lv in self.levels:
            if lv.level_id == level_id:
                return lv
        return None

    def to_dict(self) -> dict:
        return {
            "project_id": self.meta.project_id,
            "name": self.meta.name,
            "description": self.meta.description,
            "tags": list(self.meta.tags),
            "created_at": self.meta.created_at,
            "input_schema": self.input_schema.to_dict(),
            "output_schema": self.output_schema.to_dict(),
            "levels": [lv.to_dict() for lv in self.levels],
            "blocks": [b.to_dict() for b in self.blocks],
            "provider": self.provider.to_dict() if self.provider else None,
            "body_field": self.body_field,
        }


@dataclass
class Violation:
    code: str
    message: str
    field: Optional[str] = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.field is not None:
            out["field"] = self.field
        return out


def validate_schema_def(schema: SchemaDef) -> list[Violation]:
    """Check a schema definition; an empty report means the schema is valid.

    Input-role schemas must declare required string fields ``document_id``
    and ``subject_id``; field names must be unique identifiers.
    """
    violations: list[Violation] = []
    if schema.role not in ("input", "output"):
        violations.append(Violation("BadRole", f"unknown schema role {schema.role!r}"))

    seen: set[str] = set()
    for f in schema.fields:
        if f.name in seen:
            violations.append(Violation("DuplicateField", f"field {f.name!r} declared twice", f.name))
        seen.add(f.name)
        if not _FIELD_NAME_RE.match(f.name or ""):
            violations.append(Violation("BadFieldName", f"field name {f.name!r} is not a valid identifier", f.name))
        if f.kind not in FIELD_KINDS:
            violations.append(Violation("UnknownKind", f"field {f.name!r} has unknown kind {f.kind!r}", f.name))

    if schema.role == "input":
        for name in MANDATORY_INPUT_FIELDS:
            fd = schema.get_field(name)
            if fd is None:
                violations.append(Violation("MissingField", f"mandatory field {name!r} is missing", name))
                continue
            if fd.kind != "string":
                violations.append(Violation("WrongKind", f"field {name!r} must be of kind string, got {fd.kind!r}", name))
            if not fd.required:
                violations.append(Violation("NotRequired", f"mandatory field {name!r} must be required", name))
    return violations


def validate_block_graph(blocks: list[BlockDef]) -> list[str]:
    """Topologically order blocks so every referenced block precedes its consumer.

    Ties break by (display_order, block_id), giving a deterministic execution
    order. Raises BlockGraphInvalid on a reference cycle or a dangling ref.
    """
    ids = [b.block_id for b in blocks]
    id_set = set(ids)
    deps: dict[str, set[str]] = {b.block_id: set() for b in blocks}
    for b in blocks:
        for src in b.input_sources:
            if src.kind is not SourceKind.BLOCK_REF:
                continue
            if src.block_id not in id_set:
                raise BlockGraphInvalid(
                    f"block {b.block_id!r} references unknown block {src.block_id!r}",
                    kind="dangling_ref", block_id=src.block_id,
                )
            deps[b.block_id].add(src.block_id)

    sort_key = {b.block_id: (b.display_order, b.block_id) for b in blocks}
    remaining = deps
    order: list[str] = []
    while remaining:
        head = None
        for bid, d in remaining.items():
            if not d and (head is None or sort_key[bid] < sort_key[head]):
                head = bid
        if head is None:
            cycle = sorted(_find_cycle(remaining))
            raise BlockGraphInvalid(
                "block references form a cycle: " + ", ".join(cycle),
                kind="cycle", block_ids=cycle,
            )
        order.append(head)
        del remaining[head]
        for d in remaining.values():
            d.discard(head)
    return order


def _find_cycle(deps: dict[str, set[str]]) -> list[str]:
    """Walk dependency edges from an arbitrary node until a node repeats."""
    start = next(iter(deps))
    path: list[str] = []
    seen: dict[str, int] = {}
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = next(iter(deps[node]))
    return path[seen[node]:]


def validate_blocks(blocks: list[BlockDef], input_schema: SchemaDef,
                    levels: list[AnnotationLevel]) -> list[Violation]:
    """Per-block invariants: id/name, mode vs. declared sources, source targets."""
    violations: list[Violation] = []
    seen_ids: set[str] = set()
    field_names = set(input_schema.field_names())
    level_ids = {lv.level_id for lv in levels}

    for b in blocks:
        if b.block_id in seen_ids:
            violations.append(Violation("DuplicateBlockId", f"block id {b.block_id!r} declared twice", b.block_id))
        seen_ids.add(b.block_id)
        if not b.name:
            violations.append(Violation("EmptyName", f"block {b.block_id!r} has an empty name", b.block_id))

        kinds = [s.kind for s in b.input_sources]
        if b.mode is BlockMode.PLAIN:
            if b.input_sources:
                violations.append(Violation(
                    "PlainHasSources", f"plain block {b.block_id!r} must not declare input sources", b.block_id))
        elif b.mode is BlockMode.AI_SOLO:
            if not b.system_prompt:
                violations.append(Violation(
                    "EmptyPrompt", f"ai_solo block {b.block_id!r} needs a system prompt", b.block_id))
            if any(k is not SourceKind.SYSTEM_PROMPT for k in kinds):
                violations.append(Violation(
                    "NonPromptSource", f"ai_solo block {b.block_id!r} may only declare system_prompt sources", b.block_id))
        elif b.mode is BlockMode.COLLABORATIVE:
            if not b.system_prompt:
                violations.append(Violation(
                    "EmptyPrompt", f"collaborative block {b.block_id!r} needs a system prompt", b.block_id))
            if not b.input_sources:
                violations.append(Violation(
                    "NoSources", f"collaborative block {b.block_id!r} must declare at least one input source", b.block_id))

        for src in b.input_sources:
            if src.kind is SourceKind.FIELD and src.field_name not in field_names:
                violations.append(Violation(
                    "UnknownField", f"block {b.block_id!r} reads undeclared field {src.field_name!r}", b.block_id))
            if src.kind is SourceKind.HIGHLIGHTS and src.level_id != ALL_LEVELS and src.level_id not in level_ids:
                violations.append(Violation(
                    "UnknownLevel", f"block {b.block_id!r} reads unknown level {src.level_id!r}", b.block_id))
    return violations


def validate_levels(levels: list[AnnotationLevel]) -> None:
    labels: set[str] = set()
    ordinals: set[int] = set()
    for lv in levels:
        if not lv.label:
            raise LevelInvalid(f"level {lv.level_id!r} has an empty label", level_id=lv.level_id)
        if lv.label in labels:
            raise DuplicateLevelLabel(f"level label {lv.label!r} used twice", label=lv.label)
        labels.add(lv.label)
        if lv.ordinal < 0:
            raise LevelInvalid(f"level {lv.level_id!r} has negative ordinal", level_id=lv.level_id)
        if lv.ordinal in ordinals:
            raise LevelInvalid(f"level ordinal {lv.ordinal} used twice", ordinal=lv.ordinal)
        ordinals.add(lv.ordinal)
        if lv.level_id == ALL_LEVELS:
            raise LevelInvalid(f"level id {ALL_LEVELS!r} is reserved", level_id=lv.level_id)
        if lv.color and not _HEX_COLOR_RE.match(lv.color):
            raise LevelInvalid(f"level {lv.level_id!r} color must be #RRGGBB", level_id=lv.level_id)


def validate_project(project: Project) -> None:
    """Raise the first structural problem found; a stored project never raises."""
    if not project.meta.name:
        raise ValidationError("project name must be nonempty")
    report = validate_schema_def(project.input_schema)
    if project.input_schema.role != "input":
        report.append(Violation("BadRole", "input schema must have role 'input'"))
    if report:
        raise SchemaInvalid("input schema invalid", violations=[v.to_dict() for v in report])
    report = validate_schema_def(project.output_schema)
    if project.output_schema.role != "output":
        report.append(Violation("BadRole", "output schema must have role 'output'"))
    if report:
        raise SchemaInvalid("output schema invalid", violations=[v.to_dict() for v in report])

    validate_levels(project.levels)

    block_report = validate_blocks(project.blocks, project.input_schema, project.levels)
    if block_report:
        raise BlockInvalid("block definitions invalid", violations=[v.to_dict() for v in block_report])
    validate_block_graph(project.blocks)

    if not _FIELD_NAME_RE.match(project.body_field or ""):
        raise ValidationError(f"body_field {project.body_field!r} is not a valid field name")


def assign_level_colors(levels: list[AnnotationLevel]) -> None:
    for lv in levels:
        if not lv.color:
            lv.color = DEFAULT_PALETTE[lv.ordinal % len(DEFAULT_PALETTE)]


def new_id() -> str:
    return uuid.uuid4().hex[:12]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


def create_project(store, meta: ProjectMeta, input_schema: SchemaDef, output_schema: SchemaDef,
                   levels: list[AnnotationLevel], blocks: list[BlockDef],
                   provider: Optional[ProviderConfig] = None, body_field: str = "text") -> Project:
    """Validate and persist a new project; the store assigns the project id."""
    project = Project(
        meta=ProjectMeta(
            project_id=meta.project_id or new_id(),
            name=meta.name,
            description=meta.description,
            tags=list(meta.tags),
            created_at=meta.created_at or utc_now(),
        ),
        input_schema=input_schema,
        output_schema=output_schema,
        levels=levels,
        blocks=blocks,
        provider=provider,
        body_field=body_field,
    )
    assign_level_colors(project.levels)
    validate_project(project)
    store.save_project(project)
    return project


# --- wire-format parsing ---

def parse_input_source(raw: dict) -> InputSource:
    if not isinstance(raw, dict):
        raise BlockInvalid("input source must be an object")
    try:
        kind = SourceKind(raw.get("kind", ""))
    except ValueError:
        raise BlockInvalid(f"unknown input source kind {raw.get('kind')!r}")
    if kind is SourceKind.BLOCK_REF and not raw.get("block_id"):
        raise BlockInvalid("block_ref source needs a block_id")
    if kind is SourceKind.FIELD and not raw.get("field_name"):
        raise BlockInvalid("field source needs a field_name")
    level = raw.get("level_id", ALL_LEVELS if kind is SourceKind.HIGHLIGHTS else None)
    return InputSource(
        kind,
        block_id=raw.get("block_id") if kind is SourceKind.BLOCK_REF else None,
        field_name=raw.get("field_name") if kind is SourceKind.FIELD else None,
        level_id=level if kind is SourceKind.HIGHLIGHTS else None,
    )


def parse_schema_def(raw: dict, role: str) -> SchemaDef:
    if not isinstance(raw, dict) or not isinstance(raw.get("fields"), list):
        raise SchemaInvalid(f"{role} schema must be an object with a fields array")
    fields = []
    for f in raw["fields"]:
        if not isinstance(f, dict) or "name" not in f:
            raise SchemaInvalid("each schema field needs a name")
        fields.append(FieldDef(
            name=str(f["name"]),
            kind=str(f.get("kind", "string")),
            required=bool(f.get("required", False)),
        ))
    return SchemaDef(fields=fields, role=str(raw.get("role", role)))


def parse_block_def(raw: dict) -> BlockDef:
    if not isinstance(raw, dict):
        raise BlockInvalid("block definition must be an object")
    try:
        mode = BlockMode(raw.get("mode", ""))
    except ValueError:
        raise BlockInvalid(f"unknown block mode {raw.get('mode')!r}", block_id=raw.get("block_id"))
    params = raw.get("params") or {}
    return BlockDef(
        block_id=str(raw.get("block_id") or new_id()),
        name=str(raw.get("name", "")),
        mode=mode,
        system_prompt=str(raw.get("system_prompt", "")),
        input_sources=[parse_input_source(s) for s in raw.get("input_sources", [])],
        display_order=int(raw.get("display_order", 0)),
        params=GenerationParams(
            temperature=float(params.get("temperature", 0.2)),
            max_tokens=int(params.get("max_tokens", 512)),
        ),
    )


def parse_level(raw: dict) -> AnnotationLevel:
    if not isinstance(raw, dict) or not raw.get("label"):
        raise LevelInvalid("annotation level needs a label")
    return AnnotationLevel(
        level_id=str(raw.get("level_id") or new_id()),
        label=str(raw["label"]),
        color=str(raw.get("color", "")),
        ordinal=int(raw.get("ordinal", 0)),
    )


def parse_project(raw: dict, keep_ids: bool = False) -> Project:
    """Build an (unvalidated) Project from its JSON form.

    With keep_ids the project_id and created_at are taken from the payload,
    which import and storage loading rely on.
    """
    if not isinstance(raw, dict):
        raise ValidationError("project definition must be a JSON object")
    levels = [parse_level(lv) for lv in raw.get("levels", [])]
    # auto-number ordinals when the payload leaves them all at zero
    if len(levels) > 1 and all(lv.ordinal == 0 for lv in levels):
        for i, lv in enumerate(levels):
            lv.ordinal = i
    provider_raw = raw.get("provider")
    return Project(
        meta=ProjectMeta(
            project_id=str(raw.get("project_id", "")) if keep_ids else "",
            name=str(raw.get("name", "")),
            description=str(raw.get("description", "")),
            tags=[str(t) for t in raw.get("tags", [])],
            created_at=str(raw.get("created_at", "")) if keep_ids else "",
        ),
        input_schema=parse_schema_def(raw.get("input_schema", {}), "input"),
        output_schema=parse_schema_def(raw.get("output_schema", {}), "output"),
        levels=levels,
        blocks=[parse_block_def(b) for b in raw.get("blocks", [])],
        provider=ProviderConfig.from_dict(provider_raw) if provider_raw else None,
        body_field=str(raw.get("body_field", "text")),
    )
