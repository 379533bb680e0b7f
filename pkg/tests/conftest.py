import pytest

from aiano import corpus
from aiano.entries import AnnotationEntry, Highlight
from aiano.projects import (
    AnnotationLevel,
    BlockDef,
    BlockMode,
    FieldDef,
    InputSource,
    ProjectMeta,
    SchemaDef,
    create_project,
)
from aiano.store import Store


def make_input_schema(extra=()):
    fields = [
        FieldDef("document_id", "string", required=True),
        FieldDef("subject_id", "string", required=True),
        FieldDef("text", "string", required=True),
    ]
    fields.extend(extra)
    return SchemaDef(fields=fields, role="input")


def make_output_schema():
    return SchemaDef(
        fields=[FieldDef("question", "string"), FieldDef("answer", "string")],
        role="output",
    )


@pytest.fixture
def store(tmp_path):
    return Store(tmp_path / "store")


@pytest.fixture
def qa_project(store):
    """The two-block question/answer setup used across the suite."""
    return create_project(
        store,
        meta=ProjectMeta(name="RAG-QA", description="question answering", tags=["qa"]),
        input_schema=make_input_schema([FieldDef("title", "string")]),
        output_schema=make_output_schema(),
        levels=[
            AnnotationLevel("lv-imp", "important", ordinal=0),
            AnnotationLevel("lv-dis", "distracting", ordinal=1),
        ],
        blocks=[
            BlockDef("q", "Question", BlockMode.PLAIN, display_order=0),
            BlockDef(
                "a", "Answer", BlockMode.COLLABORATIVE,
                system_prompt="Answer the question using only the highlighted passages.",
                input_sources=[
                    InputSource.block_ref("q"),
                    InputSource.highlights(),
                    InputSource.system_prompt(),
                ],
                display_order=1,
            ),
        ],
    )


GERMAN_DOCS = [
    {"document_id": "d1", "subject_id": "s1", "title": "Berlin",
     "text": "Berlin ist die Hauptstadt von Deutschland."},
    {"document_id": "d2", "subject_id": "s1", "title": "Paris",
     "text": "Die Hauptstadt von Frankreich ist Paris."},
    {"document_id": "d3", "subject_id": "s2", "title": "München",
     "text": "München ist eine Stadt in Bayern."},
    {"document_id": "d4", "subject_id": "s2", "title": "Paris II",
     "text": "Paris ist schön. Paris ist groß."},
    {"document_id": "d5", "subject_id": "s3", "title": "Dreimal",
     "text": "Berlin Berlin Berlin."},
]


@pytest.fixture
def corpus_project(store, qa_project):
    report = corpus.ingest_documents(store, qa_project.project_id, GERMAN_DOCS)
    assert report.accepted == len(GERMAN_DOCS), report.rejected
    return qa_project


def make_highlight(document_id, start, end, text, level_id="lv-imp", hid=None):
    return Highlight(
        highlight_id=hid or f"h-{document_id}-{start}",
        document_id=document_id,
        level_id=level_id,
        start=start,
        end=end,
        text_snapshot=text,
    )


def make_entry(project_id, entry_id="e1", subject_id="s1", highlights=None):
    return AnnotationEntry(
        entry_id=entry_id,
        project_id=project_id,
        subject_id=subject_id,
        highlights=highlights or [],
    )
