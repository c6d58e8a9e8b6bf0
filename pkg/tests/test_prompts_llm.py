import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from colabel.graph import LabelSpace
from colabel.labeling import MISSING, UNPARSED
from colabel.llm import ReplayCache, fetch_llm_predictions, load_predictions, prompt_key, write_predictions
from colabel.prompts import TEMPLATES, EmptyTextWarning, PromptTemplate, parse_llm_label, render_prompt

LS = LabelSpace(("Databases", "Neural_Networks", "Theory"))


def test_cora_template_prefix():
    text = render_prompt(PromptTemplate.named("cora"), "We study sparse attention.", LS)
    assert text.startswith("Given a node-centered graph with centric node description:")
    assert text.endswith("please tell me which class the center node belongs to?")
    assert "Databases, Neural_Networks, Theory" in text


def test_all_templates_render_every_class():
    for name in TEMPLATES:
        out = PromptTemplate.named(name).render("abc", LS)
        assert all(c in out for c in LS.class_names)


def test_empty_text_flagged():
    with pytest.warns(EmptyTextWarning):
        out = PromptTemplate.named("generic").render("", LS)
    assert "description: ," in out


def test_label_order_follows_label_space():
    permuted = LabelSpace(("Theory", "Databases", "Neural_Networks"))
    a = PromptTemplate.named("generic").render("x", permuted)
    assert "Theory, Databases, Neural_Networks" in a
    assert a == PromptTemplate.named("generic").render("x", permuted)


def test_template_errors():
    with pytest.raises(ValueError, match="bogus"):
        PromptTemplate("{raw_text} {bogus}")
    with pytest.raises(KeyError):
        PromptTemplate.named("nope")


@pytest.mark.parametrize("raw,expected", [
    ("neural_networks.", 1),
    ("  THEORY ", 2),
    ("The center node belongs to Databases.", 0),
    ("It is either Databases or Theory", UNPARSED),
    ("", UNPARSED),
    ("banana", UNPARSED),
    (None, UNPARSED),
])
def test_parse_examples(raw, expected):
    assert parse_llm_label(raw, LS) == expected


def test_parse_two_abbreviations_ambiguous():
    assert parse_llm_label("It is either DB or IR", LabelSpace(("DB", "IR", "ML"))) == UNPARSED


def test_parse_nested_names():
    ls = LabelSpace(("Learning", "Machine_Learning"))
    assert parse_llm_label("answer: Machine_Learning", ls) == 1
    assert parse_llm_label("learning", ls) == 0


class _Server:
    """Local HTTP endpoint whose behaviour is a function of (prompt, attempt number)."""

    def __init__(self, respond):
        self.calls = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                server.calls.append(body["prompt"])
                status, payload = respond(body["prompt"], server.calls.count(body["prompt"]))
                data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


PROMPTS = [(3, "p3"), (0, "p0"), (7, "p7")]


def test_echo_endpoint():
    with _Server(lambda p, k: (200, {"label": "Neural_Networks"})) as srv:
        res = fetch_llm_predictions(srv.url, PROMPTS, LS, 8, sleep=lambda s: None)
    assert [res.predictions.labels[v] for v in (0, 3, 7)] == [1, 1, 1]
    assert res.predictions.labels[1] == MISSING
    assert list(res.raw) == [0, 3, 7]


def test_retry_then_success():
    sleeps = []
    with _Server(lambda p, k: (500, "oops") if k <= 3 else (200, {"label": "Theory"})) as srv:
        res = fetch_llm_predictions(srv.url, [(0, "p")], LS, 1, backoff=0.1, sleep=sleeps.append)
        assert srv.calls.count("p") == 4
    assert res.predictions.labels[0] == 2
    assert sleeps == [0.1, 0.2, 0.4]


def test_gives_up_after_five_attempts():
    with _Server(lambda p, k: (503, "busy")) as srv:
        res = fetch_llm_predictions(srv.url, [(0, "p")], LS, 1, sleep=lambda s: None)
        assert len(srv.calls) == 5
    assert res.predictions.labels[0] == UNPARSED
    assert "gave up" in res.errors[0]


def test_banana_and_malformed():
    def respond(p, k):
        return (200, {"label": "banana"}) if p == "a" else (200, "not json")
    with _Server(respond) as srv:
        res = fetch_llm_predictions(srv.url, [(0, "a"), (1, "b")], LS, 2, sleep=lambda s: None)
    assert res.predictions.labels.tolist() == [UNPARSED, UNPARSED]
    assert res.errors[1] == "malformed response body"


def test_replay_cache_avoids_network(tmp_path):
    cache_path = tmp_path / "cache.jsonl"
    with _Server(lambda p, k: (200, {"label": "Databases"})) as srv:
        fetch_llm_predictions(srv.url, PROMPTS, LS, 8, cache=ReplayCache(cache_path), sleep=lambda s: None)
        assert len(srv.calls) == 3
    cache = ReplayCache(cache_path)
    assert len(cache) == 3 and cache.get("p0") == "Databases"
    res = fetch_llm_predictions("http://127.0.0.1:9/", PROMPTS, LS, 8, cache=cache, max_attempts=1,
                                sleep=lambda s: None)
    assert not res.errors
    keys = {json.loads(line)["key"] for line in cache_path.read_text().splitlines()}
    assert keys == {prompt_key(p) for _, p in PROMPTS}


def test_network_failure_is_unparsed():
    res = fetch_llm_predictions("http://127.0.0.1:9/", [(0, "x")], LS, 1, max_attempts=2, sleep=lambda s: None,
                                timeout=1.0)
    assert res.predictions.labels[0] == UNPARSED
    assert 0 in res.errors


def test_predictions_file_round_trip(tmp_path):
    write_predictions({2: "Theory", 0: None}, tmp_path / "p.jsonl")
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert json.loads(lines[0]) == {"node_id": 0, "label": ""}
    ps = load_predictions(tmp_path / "p.jsonl", LS, 3)
    assert ps.labels.tolist() == [UNPARSED, MISSING, 2]
    (tmp_path / "bad.jsonl").write_text('{"node": 1}\n')
    with pytest.raises(ValueError, match=":1"):
        load_predictions(tmp_path / "bad.jsonl", LS, 3)
