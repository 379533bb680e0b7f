"""Document ingestion and full-text search across and within documents.

Corpus search is token-based BM25 (k1=1.2, b=0.75); within-document search
is a literal case-insensitive scan returning character spans. All offsets
count Unicode scalar values, never bytes, so backend and UI agree on
positions regardless of encoding.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Any, Optional

from .errors import DocumentNotFound, EmptyQuery, PayloadNotArray, ValidationError
from .projects import Project, SchemaDef
from .store import Store

_WORD_RE = re.compile(r"\w+")

BM25_K1 = 1.2
BM25_B = 0.75
SNIPPET_RADIUS = 40


def _fold(token: str) -> str:
    return unicodedata.normalize("NFC", unicodedata.normalize("NFC", token).casefold())


def tokenize(text: str) -> list[str]:
    """Case-folded, NFC-normalized word tokens. No stemming.

    The text is recomposed before word segmentation so decomposed input
    (combining marks) yields the same terms as its composed form.
    """
    return [_fold(m.group()) for m in _WORD_RE.finditer(unicodedata.normalize("NFC", text))]


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokens with their [start, end) character spans in the original text."""
    return [(_fold(m.group()), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


@dataclass
class Document:
    document_id: str
    subject_id: str
    text: str
    extra_fields: dict
    length_chars: int
    raw: dict

    def to_dict(self) -> dict:
        return dict(self.raw)


@dataclass
class SearchHit:
    document_id: str
    score: float
    match_count: int
    snippet: str

    def to_dict(self) -> dict:
        return {
            "document_id": self.document_id,
            "score": self.score,
            "match_count": self.match_count,
            "snippet": self.snippet,
        }


@dataclass
class MatchSpan:
    start: int
    end: int

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end}


@dataclass
class IngestReport:
    accepted: int
    rejected: list[dict]

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "rejected": self.rejected}


# --- schema validation of incoming documents ---

def _kind_ok(value: Any, kind: str) -> bool:
    if kind == "string":
        return isinstance(value, str)
    if kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "string-list":
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    if kind == "object":
        return isinstance(value, dict)
    return False


def validate_document_object(obj: Any, schema: SchemaDef, body_field: str) -> Optional[dict]:
    """Return the first violation for one ingest object, or None if it is fine."""
    if not isinstance(obj, dict):
        return {"code": "NotAnObject", "message": "document must be a JSON object"}
    for f in schema.fields:
        if f.name not in obj:
            if f.required:
                return {"code": "MissingField", "field": f.name,
                        "message": f"required field {f.name!r} is missing"}
            continue
        if not _kind_ok(obj[f.name], f.kind):
            return {"code": "WrongKind", "field": f.name,
                    "message": f"field {f.name!r} must be of kind {f.kind}"}
    if not str(obj.get("document_id", "")):
        return {"code": "MissingField", "field": "document_id",
                "message": "document_id must be a nonempty string"}
    if not str(obj.get("subject_id", "")):
        return {"code": "MissingField", "field": "subject_id",
                "message": "subject_id must be a nonempty string"}
    if body_field in obj and schema.get_field(body_field) is None and not isinstance(obj[body_field], str):
        return {"code": "WrongKind", "field": body_field,
                "message": f"body field {body_field!r} must be a string"}
    return None


def ingest_documents(store: Store, project_id: str, payload: Any) -> IngestReport:
    """Validate each object against the project input schema and persist the
    accepted ones; one bad row never blocks the rest of the batch."""
    project = store.get_project(project_id)
    if not isinstance(payload, list):
        raise PayloadNotArray("ingest payload must be a JSON array")
    with store.project_lock(project_id):
        documents = store.load_documents(project_id)
        accepted = 0
        rejected: list[dict] = []
        for index, obj in enumerate(payload):
            violation = validate_document_object(obj, project.input_schema, project.body_field)
            if violation is None:
                doc_id = str(obj["document_id"])
                if doc_id in documents:
                    violation = {"code": "DuplicateDocumentId", "field": "document_id",
                                 "message": f"document id {doc_id!r} already ingested"}
                else:
                    documents[doc_id] = obj
                    accepted += 1
                    continue
            violation["index"] = index
            rejected.append(violation)
        if accepted:
            store.save_documents(project_id, documents)
    return IngestReport(accepted=accepted, rejected=rejected)


def get_document(store: Store, project_id: str, document_id: str) -> Document:
    project = store.get_project(project_id)
    raw = store.get_document_raw(project_id, document_id)
    text = str(raw.get(project.body_field, ""))
    extra = {k: v for k, v in raw.items()
             if k not in ("document_id", "subject_id", project.body_field)}
    return Document(
        document_id=str(raw["document_id"]),
        subject_id=str(raw["subject_id"]),
        text=text,
        extra_fields=extra,
        length_chars=len(text),
        raw=raw,
    )


# --- BM25 index ---

class BM25Index:
    """Inverted term-frequency index scored with nonnegative BM25.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)) keeps every score >= 0 even
    for terms present in most documents. Scores sum over unique query terms.
    """

    def __init__(self, texts: dict[str, str], k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.term_freqs: dict[str, Counter] = {did: Counter(tokenize(t)) for did, t in texts.items()}
        self.doc_lens: dict[str, int] = {did: sum(tf.values()) for did, tf in self.term_freqs.items()}
        self.N = len(texts)
        total = sum(self.doc_lens.values())
        self.avgdl = total / self.N if self.N else 0.0
        df: Counter = Counter()
        for tf in self.term_freqs.values():
            df.update(tf.keys())
        self.idf = {t: math.log(1.0 + (self.N - n + 0.5) / (n + 0.5)) for t, n in df.items()}

    def score(self, query_terms: list[str]) -> dict[str, tuple[float, int]]:
        """Per-document (score, match_count) over documents matching >= 1 term."""
        terms = sorted(set(query_terms))
        out: dict[str, tuple[float, int]] = {}
        for did, tf in self.term_freqs.items():
            dl = self.doc_lens[did]
            norm = self.k1 * (1.0 - self.b + self.b * (dl / self.avgdl if self.avgdl else 0.0))
            s = 0.0
            matches = 0
            for t in terms:
                f = tf.get(t, 0)
                if not f:
                    continue
                matches += f
                s += self.idf[t] * (f * (self.k1 + 1.0)) / (f + norm)
            if matches:
                out[did] = (s, matches)
        return out


def get_index(store: Store, project_id: str) -> BM25Index:
    revision = store.documents_revision(project_id)
    cached = store.index_cache.get(project_id)
    if cached and cached[0] == revision:
        return cached[1]
    index = BM25Index(store.document_texts(project_id))
    store.index_cache[project_id] = (revision, index)
    return index


def _snippet(text: str, query_terms: set[str]) -> str:
    for token, start, end in tokenize_with_spans(text):
        if token in query_terms:
            lo = max(0, start - SNIPPET_RADIUS)
            hi = min(len(text), end + SNIPPET_RADIUS)
            return text[lo:hi]
    return text[: 2 * SNIPPET_RADIUS]


def search_corpus(store: Store, project_id: str, query: str, limit: int = 10) -> list[SearchHit]:
    """BM25-ranked hits over every document containing at least one query token."""
    store.get_project(project_id)
    if limit <= 0:
        raise ValidationError("limit must be a positive integer")
    terms = tokenize(query)
    if not terms:
        raise EmptyQuery("query contains no searchable tokens")
    index = get_index(store, project_id)
    scored = index.score(terms)
    ranked = sorted(scored.items(), key=lambda kv: (-kv[1][0], kv[0]))[:limit]
    texts = store.document_texts(project_id)
    term_set = set(terms)
    return [
        SearchHit(document_id=did, score=score, match_count=matches,
                  snippet=_snippet(texts[did], term_set))
        for did, (score, matches) in ranked
    ]


def find_spans(text: str, query: str) -> list[tuple[int, int]]:
    """All non-overlapping, leftmost-first spans whose slice case-folds to the
    query. Case folding may change string length (e.g. ß → ss), so the scan
    folds character by character and only accepts matches on char boundaries."""
    qcf = query.casefold()
    out: list[tuple[int, int]] = []
    i, n = 0, len(text)
    while i < n:
        folded = 0
        j = i
        matched = False
        while j < n:
            piece = text[j].casefold()
            if not qcf.startswith(piece, folded):
                break
            folded += len(piece)
            j += 1
            if folded == len(qcf):
                matched = True
                break
        if matched:
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def search_within(store: Store, project_id: str, document_id: str, query: str) -> list[MatchSpan]:
    """Every case-insensitive occurrence of the literal query string."""
    if not query:
        raise EmptyQuery("query must be nonempty")
    doc = get_document(store, project_id, document_id)
    return [MatchSpan(start, end) for start, end in find_spans(doc.text, query)]
