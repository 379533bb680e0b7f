import json
import socket

from fastapi.testclient import TestClient

from aiano import evaluation
from aiano.api import create_app
from aiano.cli import run
from aiano.export import canonical_json_bytes
from aiano.store import Store

from conftest import GERMAN_DOCS

from test_api import PROJECT_BODY


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def make_project(tmp_path, capsys):
    store_dir = str(tmp_path / "store")
    proj_file = write_json(tmp_path / "proj.json", PROJECT_BODY)
    assert run(["project", "create", "--store", store_dir, "--file", proj_file]) == 0
    pid = capsys.readouterr().out.strip()
    assert pid
    return store_dir, pid


def test_project_create_prints_id(tmp_path, capsys):
    store_dir, pid = make_project(tmp_path, capsys)
    assert Store(store_dir).get_project(pid).meta.name == "RAG-QA"


def test_create_invalid_project_exit_1(tmp_path, capsys):
    bad = dict(PROJECT_BODY, blocks=[
        {"block_id": "x", "name": "X", "mode": "collaborative", "system_prompt": "p",
         "input_sources": [{"kind": "block_ref", "block_id": "y"}]},
        {"block_id": "y", "name": "Y", "mode": "collaborative", "system_prompt": "p",
         "input_sources": [{"kind": "block_ref", "block_id": "x"}]},
    ])
    proj_file = write_json(tmp_path / "bad.json", bad)
    code = run(["project", "create", "--store", str(tmp_path / "s"), "--file", proj_file])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == "BlockGraphInvalid"


def test_missing_file_exit_2(tmp_path, capsys):
    code = run(["project", "create", "--store", str(tmp_path / "s"),
                "--file", str(tmp_path / "nope.json")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == "FileNotFoundError"


def test_docs_ingest_and_per_row_rejection(tmp_path, capsys):
    store_dir, pid = make_project(tmp_path, capsys)
    good = write_json(tmp_path / "docs.json", GERMAN_DOCS)
    assert run(["docs", "ingest", "--store", store_dir, "--project", pid, "--file", good]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["accepted"] == len(GERMAN_DOCS)

    mixed = write_json(tmp_path / "mixed.json", [
        {"document_id": "x1", "subject_id": "s", "text": "ok"},
        {"subject_id": "s", "text": "missing id"},
    ])
    assert run(["docs", "ingest", "--store", store_dir, "--project", pid, "--file", mixed]) == 1
    report = json.loads(capsys.readouterr().out.strip())
    assert report["accepted"] == 1
    assert report["rejected"][0]["index"] == 1


def annotate_via_api(store_dir, pid):
    client = TestClient(create_app(Store(store_dir), mock_llm=True))
    client.post(f"/projects/{pid}/entries", json={"entry_id": "e1", "subject_id": "s1"})
    client.put(f"/projects/{pid}/entries/e1",
               json={"block_values": {"q": "Wer?"}}, headers={"If-Match": "1"})
    client.post(f"/projects/{pid}/entries/e1/highlights",
                json={"document_id": "d1", "level_id": "lv-imp", "start": 0, "end": 6},
                headers={"If-Match": "2"})
    client.post(f"/projects/{pid}/entries/e1/blocks/a/generate",
                json={}, headers={"If-Match": "3"})


def test_dataset_export_matches_api_bytes(tmp_path, capsys):
    store_dir, pid = make_project(tmp_path, capsys)
    docs = write_json(tmp_path / "docs.json", GERMAN_DOCS)
    run(["docs", "ingest", "--store", store_dir, "--project", pid, "--file", docs])
    annotate_via_api(store_dir, pid)
    capsys.readouterr()

    out = tmp_path / "dataset.json"
    assert run(["dataset", "export", "--store", store_dir, "--project", pid,
                "--question-block", "q", "--answer-block", "a", "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["records"] == 1

    client = TestClient(create_app(Store(store_dir)))
    api_bytes = client.get(f"/projects/{pid}/export/dataset",
                           params={"question": "q", "answer": "a"}).content
    assert out.read_bytes() == api_bytes


def test_evaluate_matches_module(tmp_path, capsys):
    store_dir, pid = make_project(tmp_path, capsys)
    docs = write_json(tmp_path / "docs.json", GERMAN_DOCS)
    run(["docs", "ingest", "--store", store_dir, "--project", pid, "--file", docs])
    annotate_via_api(store_dir, pid)
    gold_file = write_json(tmp_path / "gold.json", {"e1": ["d1", "d3"]})
    capsys.readouterr()

    assert run(["evaluate", "--store", store_dir, "--project", pid, "--gold", gold_file]) == 0
    cli_report = json.loads(capsys.readouterr().out.strip())
    direct = evaluation.evaluate_project(Store(store_dir), pid, {"e1": {"d1", "d3"}})
    assert cli_report == json.loads(json.dumps(direct))
    assert cli_report["per_question"]["e1"]["precision"] == 1.0
    assert cli_report["per_question"]["e1"]["recall"] == 0.5


def test_archive_round_trip_via_cli(tmp_path, capsys):
    store_dir, pid = make_project(tmp_path, capsys)
    docs = write_json(tmp_path / "docs.json", GERMAN_DOCS)
    run(["docs", "ingest", "--store", store_dir, "--project", pid, "--file", docs])
    annotate_via_api(store_dir, pid)
    capsys.readouterr()

    archive_path = tmp_path / "project.aiano"
    assert run(["project", "export", "--store", store_dir, "--project", pid,
                "--out", str(archive_path), "--include-documents", "--include-entries"]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["documents"] == len(GERMAN_DOCS)
    assert report["entries"] == 1

    other_store = str(tmp_path / "other")
    assert run(["project", "import", "--store", other_store, "--file", str(archive_path)]) == 0
    new_pid = capsys.readouterr().out.strip()
    imported = Store(other_store)
    assert imported.get_entry(new_pid, "e1").version >= 1
    assert len(imported.load_documents(new_pid)) == len(GERMAN_DOCS)


def test_serve_bind_failure_exit_2(tmp_path, capsys):
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    try:
        code = run(["serve", "--store", str(tmp_path / "s"),
                    "--host", "127.0.0.1", "--port", str(port)])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["code"] == "BindFailed"
    finally:
        blocker.close()
