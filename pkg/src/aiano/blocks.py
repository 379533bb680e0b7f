"""Block execution: resolve declared input sources, assemble the prompt,
dispatch generation, and hand back a reviewable result.

Plain blocks never touch a provider; ai_solo blocks prompt from their system
prompt alone; collaborative blocks synthesize every declared source. With
the mock provider the whole pipeline is a pure function of (block, context),
which the determinism tests rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .entries import (
    ORIGIN_AI,
    ORIGIN_AI_EDITED,
    ORIGIN_HUMAN,
    AnnotationEntry,
    BlockResult,
    Highlight,
)
from .errors import (
    DocumentNotFound,
    MissingDependency,
    PlainModeHasNoPrompt,
    UnknownField,
    UnknownLevel,
)
from .llm import Completion, content_hash
from .projects import (
    ALL_LEVELS,
    BlockDef,
    BlockMode,
    InputSource,
    Project,
    SourceKind,
    validate_block_graph,
)


@dataclass
class EntryContext:
    """Everything a block may read, snapshotted from one entry."""

    entry_id: str
    project_id: str
    document_ids: list[str] = field(default_factory=list)  # focused docs, in order
    document_texts: dict[str, str] = field(default_factory=dict)
    field_values: dict[str, list[tuple[str, Any]]] = field(default_factory=dict)
    highlights: list[Highlight] = field(default_factory=list)
    block_values: dict[str, str] = field(default_factory=dict)
    block_names: dict[str, str] = field(default_factory=dict)
    level_labels: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Segment:
    source: InputSource
    label: str
    content: str


@dataclass
class ResolvedInputs:
    segments: list[Segment]

    @property
    def total_chars(self) -> int:
        return sum(len(s.content) for s in self.segments)


def _render_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def resolve_inputs(block: BlockDef, ctx: EntryContext) -> ResolvedInputs:
    """One segment per declared source, in declaration order.

    Highlight segments concatenate snapshot texts in (document_id, start)
    order; multi-document fields and texts join in focus order. An empty
    upstream block is an error, not a silent empty segment, so annotators
    learn the required fill order.
    """
    segments: list[Segment] = []
    for src in block.input_sources:
        if src.kind is SourceKind.SYSTEM_PROMPT:
            segments.append(Segment(src, "system", block.system_prompt))
        elif src.kind is SourceKind.BLOCK_REF:
            value = ctx.block_values.get(src.block_id or "", "")
            if not value:
                raise MissingDependency(
                    f"block {src.block_id!r} has no value yet", block_id=src.block_id)
            name = ctx.block_names.get(src.block_id or "", src.block_id or "")
            segments.append(Segment(src, f"block:{name}", value))
        elif src.kind is SourceKind.FIELD:
            if src.field_name not in ctx.field_values:
                raise UnknownField(f"field {src.field_name!r} is not declared",
                                   field_name=src.field_name)
            parts = [_render_value(v) for _, v in ctx.field_values[src.field_name]]
            segments.append(Segment(src, f"field:{src.field_name}", "\n".join(parts)))
        elif src.kind is SourceKind.HIGHLIGHTS:
            level = src.level_id or ALL_LEVELS
            if level != ALL_LEVELS and level not in ctx.level_labels:
                raise UnknownLevel(f"level {level!r} does not exist", level_id=level)
            chosen = [h for h in ctx.highlights if level == ALL_LEVELS or h.level_id == level]
            chosen.sort(key=lambda h: (h.document_id, h.start))
            label = "all" if level == ALL_LEVELS else ctx.level_labels[level]
            segments.append(Segment(src, f"highlights:{label}",
                                    "\n".join(h.text_snapshot for h in chosen)))
        elif src.kind is SourceKind.DOCUMENT_TEXT:
            texts = [ctx.document_texts.get(did, "") for did in ctx.document_ids]
            segments.append(Segment(src, "document", "\n".join(texts)))
    return ResolvedInputs(segments=segments)


def assemble_prompt(block: BlockDef, resolved: ResolvedInputs) -> list[tuple[str, str]]:
    """[system prompt] + one user message of '### <label>' sections.

    Deterministic: identical inputs yield identical messages, hence identical
    prompt fingerprints.
    """
    if block.mode is BlockMode.PLAIN:
        raise PlainModeHasNoPrompt(f"plain block {block.block_id!r} assembles no prompt")
    body = "\n\n".join(f"### {seg.label}\n{seg.content}" for seg in resolved.segments)
    return [("system", block.system_prompt), ("user", body)]


def prompt_fingerprint(messages: list[tuple[str, str]]) -> str:
    return content_hash(messages)


def execute_block(block: BlockDef, ctx: EntryContext, provider) -> BlockResult:
    """Run one block against its context.

    Plain mode returns an empty human-owned placeholder without any provider
    call; AI modes return the completion with full provenance metadata.
    """
    if block.mode is BlockMode.PLAIN:
        return BlockResult(block_id=block.block_id, value="", origin=ORIGIN_HUMAN)
    resolved = resolve_inputs(block, ctx)
    messages = assemble_prompt(block, resolved)
    completion: Completion = provider.complete(messages, block.params.to_dict())
    return BlockResult(
        block_id=block.block_id,
        value=completion.text,
        origin=ORIGIN_AI,
        model_id=completion.model_id or provider.model_id,
        prompt_fingerprint=prompt_fingerprint(messages),
    )


def human_override(previous: Optional[BlockResult], block_id: str, text: str) -> BlockResult:
    """Apply a human edit on top of whatever the block currently holds.

    Editing AI output flips its origin to ai_edited (metadata retained);
    writing into an empty or human block stays human-owned.
    """
    if previous is None or previous.origin == ORIGIN_HUMAN:
        return BlockResult(block_id=block_id, value=text, origin=ORIGIN_HUMAN)
    if text == previous.value:
        return previous
    return BlockResult(
        block_id=block_id,
        value=text,
        origin=ORIGIN_AI_EDITED,
        model_id=previous.model_id,
        prompt_fingerprint=previous.prompt_fingerprint,
    )


def execution_order(project: Project) -> list[str]:
    """The left-to-right fill order: every referenced block comes first."""
    return validate_block_graph(project.blocks)


def build_entry_context(store, project: Project, entry: AnnotationEntry,
                        document_ids: Optional[list[str]] = None) -> EntryContext:
    """Snapshot an entry plus its focused documents into an EntryContext.

    When no focus is given, the documents referenced by the entry's
    highlights are focused, in document_id order.
    """
    texts = store.document_texts(project.project_id)
    if document_ids is None:
        document_ids = sorted({h.document_id for h in entry.highlights})
    for did in document_ids:
        if did not in texts:
            raise DocumentNotFound(f"document {did!r} does not exist", document_id=did)

    raw_docs = store.load_documents(project.project_id)
    field_values: dict[str, list[tuple[str, Any]]] = {}
    for f in project.input_schema.fields:
        pairs = [(did, raw_docs[did][f.name]) for did in document_ids if f.name in raw_docs[did]]
        field_values[f.name] = pairs

    return EntryContext(
        entry_id=entry.entry_id,
        project_id=project.project_id,
        document_ids=list(document_ids),
        document_texts={did: texts[did] for did in document_ids},
        field_values=field_values,
        highlights=list(entry.highlights),
        block_values={bid: r.value for bid, r in entry.block_values.items()},
        block_names={b.block_id: b.name for b in project.blocks},
        level_labels={lv.level_id: lv.label for lv in project.levels},
    )
