import io
import json

import pytest
from oai_mock import FIXTURE, envelope, record_xml

from termsuggest.cli import run
from termsuggest.config import Settings, load_settings, parse_listen
from termsuggest.pipeline import Scheduler
from termsuggest.service import SuggestionService
from termsuggest.store import FileStore


@pytest.fixture
def fixture_file(tmp_path):
    path = tmp_path / "fixture.xml"
    path.write_text(envelope("<ListRecords>" + "".join(record_xml(r) for r in FIXTURE) + "</ListRecords>"))
    return path


@pytest.fixture
def cli(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for var in ("TERMSUGGEST_CONFIG", "TERMSUGGEST_STORAGE_PATH"):
        monkeypatch.delenv(var, raising=False)
    store_dir = tmp_path / "data"

    def call(*argv):
        out, err = io.StringIO(), io.StringIO()
        code = run(["--store", str(store_dir), *argv], out, err)
        return code, out.getvalue(), err.getvalue()

    call.store_dir = store_dir
    return call


def test_ingest_then_suggest(cli, fixture_file):
    code, out, err = cli("ingest", "demo", str(fixture_file))
    assert code == 0, err
    assert "stage=done" in out and "harvested=4" in out
    code, out, _ = cli("suggest", "demo", "youth")
    assert code == 0
    assert out.splitlines() == ["adolescent 1.000", "labor market 0.333"]


def test_register_schedule_run(cli, fixture_file):
    code, out, err = cli("register", "demo", "--files", str(fixture_file))
    assert code == 0, err
    assert "status=registered" in out
    code, out, _ = cli("schedule", "demo")
    assert code == 0 and "stage=queued" in out
    code, _, err = cli("schedule", "demo")
    assert code == 1 and "job already active" in err
    code, out, _ = cli("work")
    assert code == 0 and "stage=done" in out
    code, out, _ = cli("status", "demo")
    assert "status=published" in out and "@000001" in out
    code, out, _ = cli("schedule", "demo", "--run")
    assert code == 0 and "@000002" in out


def test_register_oai_endpoint(cli, mock_oai):
    srv = mock_oai()
    code, out, err = cli("register", "remote", "--endpoint", srv.url, "--set", "x", "--from", "2012-01-01")
    assert code == 0, err
    code, out, err = cli("schedule", "remote", "--run")
    assert code == 0, err
    code, out, _ = cli("suggest", "remote", "education", "--metric", "dice")
    assert out.splitlines() == ["school 0.667", "adolescent 0.500"]


def test_register_bad_endpoint(cli, mock_oai):
    srv = mock_oai()
    srv.html = True
    code, _, err = cli("register", "remote", "--endpoint", srv.url)
    assert code == 1 and "error" in err


def test_empty_term_is_usage_error(cli, fixture_file):
    cli("ingest", "demo", str(fixture_file))
    code, out, err = cli("suggest", "demo", "")
    assert code == 2 and out == "" and "empty" in err
    assert cli("suggest", "demo", "youth", "--k", "0")[0] == 2


def test_unknown_repo_and_term(cli, fixture_file):
    code, _, err = cli("suggest", "ghost", "youth")
    assert code == 1 and "ghost" in err
    cli("ingest", "demo", str(fixture_file))
    code, out, _ = cli("suggest", "demo", "zebra")
    assert code == 0 and out.strip() == "term not found: zebra"


def test_bad_arguments(cli):
    assert cli()[0] == 2
    assert cli("suggest", "demo", "x", "--metric", "cosine")[0] == 2


def test_failed_job_exit_code(cli, tmp_path):
    bad = tmp_path / "bad.xml"
    bad.write_text("<broken")
    code, out, err = cli("ingest", "demo", str(bad))
    assert code == 1 and "harvest failed" in err


def test_json_matches_service(cli, fixture_file):
    cli("ingest", "demo", str(fixture_file))
    code, out, _ = cli("--format", "json", "suggest", "demo", "Youth Unemployment")
    assert code == 0
    payload = json.loads(out)
    store = FileStore(cli.store_dir)
    rec = store.find_repository("demo")
    expected = SuggestionService(store, Scheduler(store, autostart=False)).suggest_for(rec, "Youth Unemployment")
    assert payload == expected


def test_export(cli, fixture_file):
    cli("ingest", "demo", str(fixture_file))
    code, out, _ = cli("export", "demo", "--k", "1")
    assert code == 0
    lines = [line.split("\t") for line in out.splitlines()]
    assert ["youth", "adolescent", "1.000000", "2"] in lines
    assert len(lines) == 3
    code, out, _ = cli("--format", "json", "export", "demo")
    assert len(json.loads(out)["rows"]) == 6
    cli("register", "empty", "--files", "nothing.xml")
    assert cli("export", "empty")[0] == 1


def test_keys(cli):
    code, out, _ = cli("--format", "json", "keys", "issue", "alice")
    issued = json.loads(out)
    assert issued["owner"] == "alice" and issued["key"].startswith(issued["key_id"] + ".")
    code, out, _ = cli("keys", "list")
    assert f"{issued['key_id']}\talice\tactive" in out
    assert cli("keys", "revoke", issued["key_id"])[0] == 0
    assert "revoked" in cli("keys", "list")[1]
    assert cli("keys", "revoke", "nope")[0] == 1


def test_job_status_by_id(cli, fixture_file):
    cli("register", "demo", "--files", str(fixture_file))
    job = json.loads(cli("--format", "json", "schedule", "demo")[1])
    code, out, _ = cli("status", job["job_id"])
    assert code == 0 and "stage=queued" in out


def test_register_options(cli, fixture_file, tmp_path):
    stop = tmp_path / "stop.txt"
    stop.write_text("# custom\nyouth\n")
    code, out, err = cli("--format", "json", "register", "demo", "--files", str(fixture_file),
                         "--source-fields", "title", "--lang", "en", "--stopwords", str(stop),
                         "--min-token-length", "3", "--keep-case", "--public")
    assert code == 0, err
    rec = json.loads(out)
    assert rec["mapping"] == {"source_elements": ["title"], "target_element": "subject", "language_filter": "en"}
    assert rec["pipeline"]["lowercase"] is False and rec["pipeline"]["stopwords"] == ["youth"]
    assert rec["public"] is True
    assert cli("register", "bad", "--files", "x", "--source-fields", "nope")[0] == 2


def test_config_file_and_env(tmp_path, monkeypatch):
    ini = tmp_path / "ts.ini"
    ini.write_text("[termsuggest]\nstorage_path = /srv/ts\nworkers = 4\nrate_limit = 5\njob_timeout =\n")
    s = load_settings(ini, environ={})
    assert (s.storage_path, s.workers, s.rate_limit, s.job_timeout) == ("/srv/ts", 4, 5.0, None)
    s = load_settings(ini, environ={"TERMSUGGEST_WORKERS": "8", "TERMSUGGEST_JOB_TIMEOUT": "60"})
    assert s.workers == 8 and s.job_timeout == 60.0
    s = load_settings(environ={"TERMSUGGEST_CONFIG": str(ini)})
    assert s.storage_path == "/srv/ts"
    monkeypatch.chdir(tmp_path)
    assert load_settings(environ={}) == Settings()
    ini.write_text("[termsuggest]\nbogus = 1\n")
    with pytest.raises(ValueError):
        load_settings(ini, environ={})
    with pytest.raises(FileNotFoundError):
        load_settings(tmp_path / "missing.ini", environ={})


def test_store_from_env(cli, tmp_path, monkeypatch, fixture_file):
    monkeypatch.setenv("TERMSUGGEST_STORAGE_PATH", str(tmp_path / "envstore"))
    out, err = io.StringIO(), io.StringIO()
    assert run(["ingest", "demo", str(fixture_file)], out, err) == 0
    assert (tmp_path / "envstore" / "repos").exists() or any((tmp_path / "envstore").iterdir())


def test_parse_listen():
    assert parse_listen("0.0.0.0:9000") == ("0.0.0.0", 9000)
    assert parse_listen(":80") == ("127.0.0.1", 80)
    with pytest.raises(ValueError):
        parse_listen("localhost")
