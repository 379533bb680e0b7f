import json
import os
import random
import threading

import pytest

from aiano import entries as em
from aiano.errors import (
    EntryInvalid,
    EntryNotFound,
    ProjectNotFound,
    SnapshotMismatch,
    SpanOutOfBounds,
    VersionConflict,
)
from aiano.store import Store

from conftest import make_entry, make_highlight


def test_fresh_entry_gets_version_one(store, corpus_project):
    entry = make_entry(corpus_project.project_id)
    assert store.upsert_entry(entry, expected_version=0) == 1
    loaded = store.get_entry(corpus_project.project_id, "e1")
    assert loaded.version == 1
    assert loaded.subject_id == "s1"
    assert loaded.updated_at


def test_stale_version_conflicts(store, corpus_project):
    entry = make_entry(corpus_project.project_id)
    store.upsert_entry(entry, 0)
    store.upsert_entry(entry, 1)
    with pytest.raises(VersionConflict) as exc:
        store.upsert_entry(entry, 1)
    assert exc.value.details["stored_version"] == 2


def test_unknown_project_and_entry(store, corpus_project):
    with pytest.raises(ProjectNotFound):
        store.get_entry("ghost", "e1")
    with pytest.raises(EntryNotFound):
        store.get_entry(corpus_project.project_id, "ghost")


def test_entry_rejects_unknown_block_value(store, corpus_project):
    entry = make_entry(corpus_project.project_id)
    entry.block_values["ghost"] = em.BlockResult("ghost", "x")
    with pytest.raises(EntryInvalid):
        store.upsert_entry(entry, 0)


def test_provenance_must_append(store, corpus_project):
    entry = make_entry(corpus_project.project_id)
    entry.provenance.append(em.ProvenanceEvent("t1", em.human_actor("u"), "block_edited", {"block_id": "q"}))
    store.upsert_entry(entry, 0)
    entry.provenance = [em.ProvenanceEvent("t2", em.human_actor("u"), "block_edited", {"block_id": "q"})]
    with pytest.raises(EntryInvalid):
        store.upsert_entry(entry, 1)


# --- highlights ---

def test_add_highlight_appends_event(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    # "Berlin ist die Hauptstadt von Deutschland." -> [15,25) is "Hauptstadt"
    version = store.add_highlight(pid, "e1", make_highlight("d1", 15, 25, "Hauptstadt"), 1, "anne")
    assert version == 2
    entry = store.get_entry(pid, "e1")
    assert entry.highlights[0].text_snapshot == "Hauptstadt"
    assert entry.provenance[-1].action == em.ACTION_HIGHLIGHT_ADDED
    assert entry.provenance[-1].actor == {"type": "human", "annotator_id": "anne"}


def test_empty_span_rejected(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    with pytest.raises(SpanOutOfBounds):
        store.add_highlight(pid, "e1", make_highlight("d1", 10, 10, ""), 1)
    with pytest.raises(SpanOutOfBounds):
        store.add_highlight(pid, "e1", make_highlight("d1", 0, 9999, "x"), 1)


def test_snapshot_mismatch(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    with pytest.raises(SnapshotMismatch):
        store.add_highlight(pid, "e1", make_highlight("d1", 15, 25, "haupt"), 1)


def test_missing_snapshot_filled_from_document(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    store.add_highlight(pid, "e1", make_highlight("d1", 0, 6, ""), 1)
    assert store.get_entry(pid, "e1").highlights[0].text_snapshot == "Berlin"


# --- listing ---

def test_list_entries_filters_and_order(store, corpus_project):
    pid = corpus_project.project_id
    rng = random.Random(3)
    ids = [f"e{i}" for i in range(8)]
    rng.shuffle(ids)
    for eid in ids:
        entry = make_entry(pid, entry_id=eid, subject_id="s1" if eid < "e4" else "s2")
        store.upsert_entry(entry, 0)

    listed = store.list_entries(pid)
    # oracle: generic sort on the same key
    expected = sorted(listed, key=lambda e: e.entry_id)
    expected = sorted(expected, key=lambda e: e.updated_at, reverse=True)
    assert [e.entry_id for e in listed] == [e.entry_id for e in expected]

    only_s1 = store.list_entries(pid, subject_id="s1")
    assert {e.subject_id for e in only_s1} == {"s1"}

    entry = store.get_entry(pid, "e0")
    entry.block_values["q"] = em.BlockResult("q", "Wer?")
    store.upsert_entry(entry, entry.version)
    filled = store.list_entries(pid, has_block_value="q")
    assert [e.entry_id for e in filled] == ["e0"]


def test_empty_project_lists_nothing(store, corpus_project):
    assert store.list_entries(corpus_project.project_id) == []


# --- audit ---

def test_audit_clean_on_healthy_data(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    store.add_highlight(pid, "e1", make_highlight("d1", 0, 6, "Berlin"), 1)
    assert store.audit(pid) == []


def test_audit_flags_corrupted_snapshot(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    store.add_highlight(pid, "e1", make_highlight("d1", 0, 6, "Berlin"), 1)
    # corrupt the stored file behind the store's back
    path = store._entry_path(pid, "e1")
    raw = json.loads(path.read_text())
    raw["highlights"][0]["text_snapshot"] = "Bxrlin"
    path.write_text(json.dumps(raw))
    report = store.audit(pid)
    assert [v["code"] for v in report] == ["SnapshotMismatch"]


# --- durability ---

def test_atomic_write_survives_crash_before_rename(store, corpus_project, monkeypatch):
    pid = corpus_project.project_id
    entry = make_entry(pid)
    store.upsert_entry(entry, 0)

    real_replace = os.replace

    def crashing_replace(src, dst):
        raise OSError("simulated crash before rename")

    monkeypatch.setattr(os, "replace", crashing_replace)
    entry.subject_id = "s-new"
    with pytest.raises(OSError):
        store.upsert_entry(entry, 1)
    monkeypatch.setattr(os, "replace", real_replace)

    reopened = Store(store.root)
    survivor = reopened.get_entry(pid, "e1")
    assert survivor.version == 1
    assert survivor.subject_id == "s1"  # pre-write state, never mixed


def test_reopened_store_sees_persisted_state(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)
    reopened = Store(store.root)
    assert reopened.get_project(pid).meta.name == "RAG-QA"
    assert reopened.get_entry(pid, "e1").version == 1
    assert len(reopened.load_documents(pid)) == 5


# --- interleaved writers ---

def test_two_writer_interleaving_with_replay_oracle(store, corpus_project):
    pid = corpus_project.project_id
    store.upsert_entry(make_entry(pid), 0)

    outcomes = []
    lock = threading.Lock()

    def writer(name):
        rng = random.Random(name)
        for i in range(50):
            entry = store.get_entry(pid, "e1")
            entry.provenance.append(em.ProvenanceEvent(
                at=f"t-{name}-{i}", actor=em.human_actor(name),
                action=em.ACTION_BLOCK_EDITED, payload={"block_id": "q", "tick": i}))
            if rng.random() < 0.3:
                # deliberately stale expectation some of the time
                expected = max(0, entry.version - 1)
            else:
                expected = entry.version
            try:
                new_version = store.upsert_entry(entry, expected)
                with lock:
                    outcomes.append(("ok", name, i, new_version))
            except VersionConflict:
                with lock:
                    outcomes.append(("conflict", name, i, None))

    threads = [threading.Thread(target=writer, args=(n,)) for n in ("w1", "w2")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    final = store.get_entry(pid, "e1")
    successes = [o for o in outcomes if o[0] == "ok"]
    assert final.version == 1 + len(successes)
    # every successful write's event survives in the final log
    logged = {(e.actor.get("annotator_id"), e.payload.get("tick"))
              for e in final.provenance if e.action == em.ACTION_BLOCK_EDITED}
    for _, name, i, _v in successes:
        assert (name, i) in logged
    # single-threaded replay oracle reaches the same version count
    versions = sorted(v for kind, _, _, v in outcomes if kind == "ok")
    assert versions == list(range(2, 2 + len(successes)))
