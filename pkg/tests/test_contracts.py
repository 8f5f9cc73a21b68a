"""Cross-module contract tests: thresholds, ICL demos, HTTP providers, errors."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from conftest import make_registry

from polysql.backends import ChatRequest, HashedNgramEmbedder, HttpChatBackend, HttpEmbeddingBackend
from polysql.config import config_from_dict
from polysql.errors import (
    BackendFailure,
    DimensionMismatch,
    NoApplicableMutation,
    ProviderExhausted,
)
from polysql.harness import resolve_db_file, run_eval
from polysql.pipeline import Pipeline
from polysql.schema import ColumnMeta, ColumnRef, SchemaDoc, TableMeta
from polysql.synthesis import mutate_sql, reformat_sql


# --- value threshold calibration against the offline embedder ----------------


def test_value_threshold_calibration():
    embedder = HashedNgramEmbedder()

    def cosine(a: str, b: str) -> float:
        va, vb = embedder.embed([a, b])
        return va.cosine(vb)

    threshold = 0.60
    # accepted: exact, case-variant, containing-phrase matches
    assert cosine("Alameda", "Alameda") >= threshold
    assert cosine("Alameda", "alameda") >= threshold
    assert cosine("Alameda", "Alameda County") >= threshold
    assert cosine("free rate", "free meal rate") >= threshold
    # rejected: unrelated or weakly related values
    assert cosine("Alameda", "Berkeley") < threshold
    assert cosine("Alameda", "entry number 0001") < threshold
    assert cosine("tax", "taxi") < threshold


# --- schema document validation ----------------------------------------------


def test_duplicate_table_names_rejected():
    table = TableMeta("t", columns=(ColumnMeta(ColumnRef("t", "a"), "TEXT"),))
    with pytest.raises(ValueError):
        SchemaDoc("dup", tables=(table, table))


def test_foreign_key_endpoint_must_exist():
    from polysql.schema import ForeignKey

    table = TableMeta("t", columns=(ColumnMeta(ColumnRef("t", "a"), "TEXT"),))
    fk = ForeignKey(ColumnRef("t", "a"), ColumnRef("ghost", "b"))
    with pytest.raises(ValueError):
        SchemaDoc("bad", tables=(table,), foreign_keys=(fk,))


# --- in-context-learning demonstrations ----------------------------------------


def _icl_config(tmp_path) -> dict:
    pool = [
        {"question_id": 1, "db_id": "store", "question": "Which users live in Alameda city?",
         "evidence": "", "SQL": "SELECT name FROM users WHERE city = 'Alameda'"},
        {"question_id": 2, "db_id": "store", "question": "How many products cost over 100?",
         "evidence": "", "SQL": "SELECT COUNT(*) FROM products WHERE price > 100"},
        {"question_id": 3, "db_id": "store", "question": "completely unrelated text about xyzzy",
         "evidence": "", "SQL": "SELECT 42 FROM users"},
    ]
    pool_path = tmp_path / "pool.json"
    pool_path.write_text(json.dumps(pool), encoding="utf-8")
    return {
        "workers": 1,
        "schema_iterations": 1,
        "icl": {"pool_path": "pool.json", "shots": 2},
        "roles": {
            "schema_analyst": {
                "provider": "mock",
                "entries": [
                    {"match": None, "response": "Alameda"},
                    {"match": None, "response": "users.name, users.city"},
                ],
            },
            "icl_role": {
                "provider": "mock",
                "entries": [
                    {"match": None, "response": "```sql\nSELECT name FROM users WHERE city = 'Alameda'\n```"}
                ],
            },
            "selector": {"provider": "mock", "entries": []},
        },
        "generators": [
            {
                "generator_id": "gen_icl",
                "backend_role": "icl_role",
                "prompt_template_id": "generate_icl",
                "rank": 1,
            }
        ],
    }


def test_icl_demos_are_nearest_neighbors_in_order(store_db, tmp_path):
    config = config_from_dict(_icl_config(tmp_path), tmp_path)
    pipeline = Pipeline(config)
    pipeline.ask(store_db, "Which users live in Alameda?", "")
    prompt = pipeline.registry.chat_backends["icl_role"].calls[0]
    assert "Which users live in Alameda city?" in prompt
    assert "SELECT name FROM users WHERE city = 'Alameda'" in prompt
    # two shots requested: the unrelated pool question must be left out
    assert "xyzzy" not in prompt
    # nearest demo comes first
    assert prompt.index("Alameda city") < prompt.index("How many products")


# --- live HTTP providers against a local server ---------------------------------


class _ScriptedHandler(BaseHTTPRequestHandler):
    script: list[tuple[int, dict]] = []
    requests_seen: list[dict] = []

    def do_POST(self):  # noqa: N802  (stdlib naming)
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        type(self).requests_seen.append({"path": self.path, "body": body})
        status, payload = type(self).script.pop(0)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ScriptedHandler.script = []
    _ScriptedHandler.requests_seen = []
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_http_chat_happy_path(http_server):
    _ScriptedHandler.script = [
        (200, {"choices": [{"message": {"content": "SELECT 1"}}]}),
    ]
    backend = HttpChatBackend(http_server, model="m", retries=0)
    response = backend.chat(ChatRequest("r", (("user", "hello"),), temperature=0.5))
    assert response == "SELECT 1"
    request = _ScriptedHandler.requests_seen[0]
    assert request["path"] == "/chat/completions"
    assert request["body"]["messages"] == [{"role": "user", "content": "hello"}]
    assert request["body"]["temperature"] == 0.5


def test_http_chat_client_error_fails_fast(http_server):
    _ScriptedHandler.script = [(401, {"error": "no auth"})]
    backend = HttpChatBackend(http_server, model="m", retries=2)
    with pytest.raises(ProviderExhausted):
        backend.chat(ChatRequest("r", (("user", "hello"),)))
    assert len(_ScriptedHandler.requests_seen) == 1  # no retry on 4xx


def test_http_chat_retries_transient_then_succeeds(http_server, monkeypatch):
    import polysql.backends as backends_module

    monkeypatch.setattr(backends_module.time, "sleep", lambda _s: None)
    _ScriptedHandler.script = [
        (500, {"error": "flaky"}),
        (200, {"choices": [{"message": {"content": "ok now"}}]}),
    ]
    backend = HttpChatBackend(http_server, model="m", retries=2)
    assert backend.chat(ChatRequest("r", (("user", "hello"),))) == "ok now"
    assert len(_ScriptedHandler.requests_seen) == 2


def test_http_embeddings_dimension_check(http_server):
    _ScriptedHandler.script = [
        (200, {"data": [{"embedding": [1.0, 0.0]}]}),
    ]
    backend = HttpEmbeddingBackend(http_server, model="m", dimension=3, retries=0)
    with pytest.raises(DimensionMismatch):
        backend.embed(["abc"])


def test_http_embeddings_happy_path(http_server):
    _ScriptedHandler.script = [
        (200, {"data": [{"embedding": [1.0, 0.0, 0.0]}, {"embedding": [0.0, 1.0, 0.0]}]}),
    ]
    backend = HttpEmbeddingBackend(http_server, model="m", dimension=3, retries=0)
    vectors = backend.embed(["a", "b"])
    assert len(vectors) == 2
    assert vectors[0].cosine(vectors[1]) == pytest.approx(0.0, abs=1e-9)


# --- synthesis error paths --------------------------------------------------------


def test_mutation_fallback_error_when_nothing_applies():
    with pytest.raises(NoApplicableMutation):
        mutate_sql("SELECT name FROM users", 5)


def test_reformat_propagates_backend_failure(store_db, prompts):
    registry = make_registry({"schema_analyst": []})
    with pytest.raises(BackendFailure):
        reformat_sql("SELECT name FROM users", "standardized", store_db, registry, prompts)


# --- harness plumbing --------------------------------------------------------------


def test_resolve_db_file_layouts(tmp_path):
    nested = tmp_path / "dbs" / "alpha"
    nested.mkdir(parents=True)
    (nested / "alpha.sqlite").write_bytes(b"")
    flat = tmp_path / "dbs" / "beta.sqlite"
    flat.write_bytes(b"")
    assert resolve_db_file(tmp_path / "dbs", "alpha") == nested / "alpha.sqlite"
    assert resolve_db_file(tmp_path / "dbs", "beta") == flat
    assert resolve_db_file(tmp_path / "dbs", "gamma") is None


def test_run_eval_skips_missing_databases(store_db, tmp_path):
    from test_pipeline import two_generator_config_dict
    from polysql.evaluation import BenchItem

    config = config_from_dict(two_generator_config_dict(), tmp_path)
    pipeline = Pipeline(config)
    items = [BenchItem(1, "ghost_db", "q", "", "SELECT 1")]
    report, records = run_eval(pipeline, items, tmp_path)
    assert report.skipped == [(1, "missing_database")]
    assert not records
