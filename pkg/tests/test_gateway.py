from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from reasondrive.config import load_config
from reasondrive.errors import ToolkitError
from reasondrive.gateway import (
    CompletionRequest,
    Gateway,
    HttpTransport,
    Message,
    MockTransport,
    RateLimiter,
    RecordingTransport,
    ReplayTransport,
    TransportResponse,
    build_payload,
)


def no_sleep(_seconds):
    pass


def request(text="hello", **kw):
    return CompletionRequest("m", (Message("user", text),), **kw)


def gateway(transport, tmp_path=None, **kw):
    kw.setdefault("sleep", no_sleep)
    return Gateway(transport, tmp_path / "cache" if tmp_path else None, **kw)


def test_cache_hit_makes_no_calls(tmp_path):
    transport = MockTransport(["done"])
    gw = gateway(transport, tmp_path)
    first = gw.complete(request())
    assert (first.text, first.from_cache, first.attempts) == ("done", False, 1)
    second = gw.complete(request())
    assert (second.text, second.from_cache, second.attempts) == ("done", True, 0)
    assert transport.call_count == 1
    # a fresh gateway over the same directory reads the disk cache
    fresh = MockTransport(["other"])
    assert gateway(fresh, tmp_path).complete(request()).text == "done"
    assert fresh.call_count == 0


def test_retry_after_429():
    transport = MockTransport([429, "done"])
    result = gateway(transport).complete(request())
    assert (result.text, result.attempts) == ("done", 2)
    assert transport.call_count == 2


def test_retries_5xx_and_transport_exceptions():
    transport = MockTransport([503, ConnectionResetError("reset"), "ok"])
    assert gateway(transport).complete(request()).attempts == 3


def test_backoff_is_exponential_and_capped():
    sleeps = []
    transport = MockTransport([500] * 5 + ["ok"])
    gw = Gateway(transport, max_retries=5, backoff_base=1.0, backoff_cap=4.0, sleep=sleeps.append)
    gw.complete(request())
    assert sleeps == [1.0, 2.0, 4.0, 4.0, 4.0]


@pytest.mark.parametrize("status", [401, 403])
def test_auth_failure_is_not_retried(status):
    transport = MockTransport([status, "ok"])
    with pytest.raises(ToolkitError) as err:
        gateway(transport).complete(request())
    assert err.value.code == "AUTH_FAILED"
    assert transport.call_count == 1


def test_exhausted_retries():
    transport = MockTransport([500])
    with pytest.raises(ToolkitError) as err:
        gateway(transport, max_retries=2).complete(request())
    assert err.value.code == "EXHAUSTED_RETRIES"
    assert transport.call_count == 3


def test_other_status_is_transport_error():
    with pytest.raises(ToolkitError) as err:
        gateway(MockTransport([400])).complete(request())
    assert err.value.code == "TRANSPORT_ERROR"


def test_token_budget():
    transport = MockTransport([TransportResponse(200, "a", {"prompt_tokens": 8, "completion_tokens": 4})])
    gw = gateway(transport, token_budget=10)
    assert gw.complete(request("one")).total_tokens == 12
    with pytest.raises(ToolkitError) as err:
        gw.complete(request("two"))
    assert err.value.code == "BUDGET_EXCEEDED"
    assert transport.call_count == 1


def test_batch_respects_max_in_flight():
    transport = MockTransport(responder=lambda r: r.messages[0].text.upper(), delay=0.02)
    results = gateway(transport).complete_batch([request(f"r{i}") for i in range(10)], max_in_flight=3)
    assert [r.text for r in results] == [f"R{i}" for i in range(10)]
    assert 1 <= transport.peak_in_flight <= 3


def test_batch_returns_errors_in_place():
    transport = MockTransport(responder=lambda r: 401 if r.messages[0].text == "bad" else "fine")
    results = gateway(transport).complete_batch([request("a"), request("bad"), request("c")])
    assert results[0].text == "fine" and results[2].text == "fine"
    assert isinstance(results[1], ToolkitError) and results[1].code == "AUTH_FAILED"


def test_batch_edge_cases():
    gw = gateway(MockTransport())
    assert gw.complete_batch([]) == []
    with pytest.raises(ToolkitError) as err:
        gw.complete_batch([request()], max_in_flight=0)
    assert err.value.code == "USAGE"


def test_identical_requests_in_a_batch_coalesce():
    transport = MockTransport(["same"], delay=0.02)
    results = gateway(transport).complete_batch([request()] * 6, max_in_flight=6)
    assert {r.text for r in results} == {"same"}
    assert transport.call_count == 1


def test_request_key_sensitivity(tmp_path):
    img = tmp_path / "a.jpg"
    img.write_bytes(b"one")
    base = CompletionRequest("m", (Message("user", "q", (str(img),)),))
    key = base.request_key
    assert CompletionRequest("m", (Message("user", "q", (str(img),)),)).request_key == key
    assert request("q").request_key != key
    assert CompletionRequest("m2", base.messages).request_key != key
    assert CompletionRequest("m", base.messages, temperature=0.1).request_key != key
    assert base.resample(1).request_key != key
    assert base.resample(0).request_key == key
    img.write_bytes(b"two")
    assert base.request_key != key


def test_rate_limiter_with_fake_clock():
    now = [0.0]
    waits = []

    def sleep(s):
        waits.append(s)
        now[0] += s

    limiter = RateLimiter(2, clock=lambda: now[0], sleep=sleep)
    for _ in range(5):
        limiter.acquire()
    assert waits == [1.0, 1.0]
    assert now[0] == 2.0


def test_record_then_replay(tmp_path):
    fixtures = tmp_path / "fx"
    recorder = RecordingTransport(MockTransport(["recorded answer"]), fixtures)
    assert gateway(recorder).complete(request()).text == "recorded answer"
    assert len(list(fixtures.glob("*.json"))) == 1
    assert gateway(ReplayTransport(fixtures)).complete(request()).text == "recorded answer"
    with pytest.raises(ToolkitError) as err:
        gateway(ReplayTransport(fixtures)).complete(request("unseen"))
    assert err.value.code == "TRANSPORT_ERROR"


def test_payload_shape(tmp_path):
    img = tmp_path / "f.jpg"
    img.write_bytes(b"\xff\xd8")
    req = CompletionRequest("gpt-4o", (Message("system", "sys"), Message("user", "q", (str(img),))), 0.7, 100)
    body = build_payload(req)
    assert body["model"] == "gpt-4o" and body["max_tokens"] == 100
    assert body["messages"][0] == {"role": "system", "content": [{"type": "text", "text": "sys"}]}
    parts = body["messages"][1]["content"]
    assert parts[1]["image_url"]["url"] == "data:image/jpeg;base64,/9g="


class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((self.headers.get("Authorization"), body))
        if self.headers.get("Authorization") != "Bearer secret":
            self.send_response(401)
            self.end_headers()
            return
        reply = {"choices": [{"message": {"content": "from server"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 2}}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def test_http_transport_against_local_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
        result = gateway(HttpTransport(url, "secret", timeout=5)).complete(request())
        assert result.text == "from server" and result.total_tokens == 5
        assert _Handler.seen[-1][1]["messages"][0]["content"][0]["text"] == "hello"
        with pytest.raises(ToolkitError) as err:
            gateway(HttpTransport(url, "wrong", timeout=5)).complete(request())
        assert err.value.code == "AUTH_FAILED"
    finally:
        server.shutdown()
        server.server_close()


def test_config_env_overrides_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"endpoint": {"api_key": "from-file", "rate_limit": 5}, "weights": {
        "judge": 0.0, "language": 0.5, "match": 0.25, "accuracy": 0.25}}))
    cfg = load_config(path, env={"REASONDRIVE_API_KEY": "from-env"})
    assert cfg.endpoint.api_key == "from-env" and cfg.endpoint.rate_limit == 5
    assert cfg.metrics.final_weights["language"] == 0.5
    assert cfg.to_dict()["endpoint"]["api_key"] == "***"
    assert load_config(path, env={}).endpoint.api_key == "from-file"
    path.write_text(json.dumps({"endpoint": {"nope": 1}}))
    with pytest.raises(ToolkitError) as err:
        load_config(path, env={})
    assert err.value.code == "CONFIG_INVALID"
