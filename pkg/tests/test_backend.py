import hashlib
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from caire.backend import (
    BackendRequest,
    BackendResponse,
    HttpScorerBackend,
    MockScorerBackend,
    query,
    validate_distribution,
)
from caire.errors import ProtocolError, TransportError, UnsupportedMode

VECTORS_PATH = Path(__file__).parent.parent / "conformance" / "score_protocol_vectors.json"


def dist_request(prompt, request_id="r1", **kw):
    return BackendRequest(mode="distribution", prompt_text=prompt, request_id=request_id, **kw)


def nll_request(prompt, completion, request_id="r1"):
    return BackendRequest(
        mode="nll", prompt_text=prompt, completion_text=completion, request_id=request_id
    )


# --- mock backend ------------------------------------------------------------


def test_planted_key_lookup():
    backend = MockScorerBackend(
        seed=0, planted_distributions={"ukraine|pysanka": (0.02, 0.03, 0.05, 0.15, 0.75)}
    )
    resp = query(backend, dist_request("Rate the Pysanka image for Ukraine please."))
    assert resp.probs == (0.02, 0.03, 0.05, 0.15, 0.75)


def test_unplanted_falls_back_to_seeded_hash():
    backend = MockScorerBackend(seed=42)
    req = dist_request("completely unknown prompt")
    resp = query(backend, req)
    validate_distribution(resp.probs)

    # independent recomputation of the documented fallback derivation
    payload = "\x1f".join(["42", "distribution", "completely unknown prompt", "", "", ""])
    digest = hashlib.sha256(payload.encode()).digest()
    raw = [int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(5)]
    weights = [(r / 2**32) + 0.05 for r in raw]
    expected = tuple(w / sum(weights) for w in weights)
    assert resp.probs == expected


def test_empty_table_always_valid():
    backend = MockScorerBackend(seed=42)
    for i in range(25):
        resp = query(backend, dist_request(f"prompt variant {i}", request_id=f"r{i}"))
        validate_distribution(resp.probs)


def test_mock_determinism_across_instances():
    table = {"a|b": (0.1, 0.2, 0.3, 0.2, 0.2)}
    first = MockScorerBackend(seed=7, planted_distributions=table)
    second = MockScorerBackend(seed=7, planted_distributions=table)
    prompts = ["x a b y", "unknown one", "another", "a b"]
    stream1 = [query(first, dist_request(p, request_id=str(i))) for i, p in enumerate(prompts)]
    stream2 = [query(second, dist_request(p, request_id=str(i))) for i, p in enumerate(prompts)]
    assert stream1 == stream2


def test_most_specific_planted_key_wins():
    backend = MockScorerBackend(
        seed=0,
        planted_distributions={
            "ukraine": (0.2, 0.2, 0.2, 0.2, 0.2),
            "ukraine|pysanka": (0.0, 0.0, 0.0, 0.0, 1.0),
        },
    )
    resp = query(backend, dist_request("pysanka from ukraine"))
    assert resp.probs == (0.0, 0.0, 0.0, 0.0, 1.0)
    resp = query(backend, dist_request("just ukraine"))
    assert resp.probs == (0.2, 0.2, 0.2, 0.2, 0.2)


def test_planted_nll_and_fallback():
    backend = MockScorerBackend(seed=3, planted_nlls={"Ukraine": 1.0, "Romania": 2.5})
    resp = query(backend, nll_request("ctx", "This text is relevant to Ukraine"))
    assert resp.nll == 1.0
    resp = query(backend, nll_request("ctx", "This text is relevant to Romania"))
    assert resp.nll == 2.5
    resp = query(backend, nll_request("ctx", "This text is relevant to Suriname"))
    assert math.isfinite(resp.nll) and resp.nll > 0


def test_invalid_planted_distribution_rejected_at_construction():
    with pytest.raises(ProtocolError):
        MockScorerBackend(seed=0, planted_distributions={"k": (0.5, 0.5, 0.5, 0.5, 0.5)})
    with pytest.raises(ProtocolError):
        MockScorerBackend(seed=0, planted_nlls={"k": float("nan")})


# --- request/response validation ---------------------------------------------


def test_request_validation():
    with pytest.raises(ProtocolError):
        query(MockScorerBackend(), BackendRequest(mode="nll", prompt_text="x", request_id="r"))
    with pytest.raises(ProtocolError):
        query(
            MockScorerBackend(),
            BackendRequest(mode="distribution", prompt_text="x", request_id="r", completion_text="y"),
        )
    with pytest.raises(ProtocolError):
        query(MockScorerBackend(), BackendRequest(mode="tokens", prompt_text="x", request_id="r"))


class MisbehavingBackend:
    identity = "bad"

    def __init__(self, response):
        self._response = response

    def query(self, request):
        return self._response


def test_bad_distribution_sum_is_protocol_error():
    bad = BackendResponse(request_id="r1", backend="bad", probs=(0.2, 0.2, 0.2, 0.1, 0.1))
    with pytest.raises(ProtocolError, match="sums"):
        query(MisbehavingBackend(bad), dist_request("x"))


def test_request_id_mismatch_is_protocol_error():
    bad = BackendResponse(request_id="other", backend="bad", probs=(0.2, 0.2, 0.2, 0.2, 0.2))
    with pytest.raises(ProtocolError, match="request"):
        query(MisbehavingBackend(bad), dist_request("x"))


def test_non_finite_nll_is_protocol_error():
    bad = BackendResponse(request_id="r1", backend="bad", nll=float("inf"))
    with pytest.raises(ProtocolError):
        query(MisbehavingBackend(bad), nll_request("x", "y"))


# --- shared conformance vectors (engine side) ---------------------------------


def wire_to_request(wire: dict) -> BackendRequest:
    return BackendRequest(
        mode=wire["mode"],
        prompt_text=wire.get("prompt", ""),
        request_id=wire.get("request_id", ""),
        image_b64=wire.get("image_b64"),
        image_uri=wire.get("image_uri"),
        completion_text=wire.get("completion"),
    )


def test_conformance_vectors_against_mock():
    vectors = json.loads(VECTORS_PATH.read_text())["vectors"]
    backend = MockScorerBackend(seed=13)
    assert len(vectors) >= 6
    for vector in vectors:
        expect = vector["expect"]
        request = wire_to_request(vector["request"])
        if expect["kind"] == "error":
            with pytest.raises(ProtocolError):
                query(backend, request)
            continue
        response = query(backend, request)
        if expect["kind"] == "probs":
            validate_distribution(response.probs)
        else:
            assert math.isfinite(response.nll)
        if "request_id" in expect:
            assert response.request_id == expect["request_id"]


# --- HTTP client --------------------------------------------------------------


class StubHandler(BaseHTTPRequestHandler):
    script = []  # list of (status, body_dict_or_str); popped per request
    seen = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        type(self).seen.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
        status, payload = type(self).script.pop(0)
        data = payload if isinstance(payload, (bytes, str)) else json.dumps(payload)
        if isinstance(data, str):
            data = data.encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        type(self).seen.append({"path": self.path, "auth": self.headers.get("Authorization")})
        data = json.dumps({"modes": ["distribution", "nll"], "image_b64": True, "image_uri": False, "model": "stub"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    StubHandler.script = []
    StubHandler.seen = []
    server = HTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", StubHandler
    server.shutdown()


def test_http_distribution_round_trip(stub_server):
    url, handler = stub_server
    handler.script.append(
        (200, {"request_id": "r9", "probs": [0.1, 0.2, 0.3, 0.2, 0.2], "backend": "stub-1"})
    )
    backend = HttpScorerBackend(url, token="sekrit", backoff=0.01)
    resp = query(backend, dist_request("hello", request_id="r9"))
    assert resp.probs == (0.1, 0.2, 0.3, 0.2, 0.2)
    assert resp.backend == "stub-1"
    sent = handler.seen[0]
    assert sent["path"] == "/v1/score"
    assert sent["auth"] == "Bearer sekrit"
    assert sent["body"]["mode"] == "distribution"
    assert sent["body"]["request_id"] == "r9"


def test_http_nll_round_trip(stub_server):
    url, handler = stub_server
    handler.script.append((200, {"request_id": "r2", "nll": 2.75, "backend": "stub-1"}))
    backend = HttpScorerBackend(url, backoff=0.01)
    resp = query(backend, nll_request("ctx", "This text is relevant to X", request_id="r2"))
    assert resp.nll == 2.75


def test_http_retries_on_500_then_succeeds(stub_server):
    url, handler = stub_server
    handler.script.append((500, {"error": {"code": "internal", "message": "boom"}}))
    handler.script.append(
        (200, {"request_id": "r3", "probs": [0.2, 0.2, 0.2, 0.2, 0.2], "backend": "stub-1"})
    )
    backend = HttpScorerBackend(url, backoff=0.01)
    resp = query(backend, dist_request("retry me", request_id="r3"))
    assert resp.probs is not None
    assert len(handler.seen) == 2
    # idempotent retry resends the same request_id
    assert handler.seen[0]["body"]["request_id"] == handler.seen[1]["body"]["request_id"]


def test_http_unsupported_mode(stub_server):
    url, handler = stub_server
    handler.script.append(
        (400, {"error": {"code": "unsupported_mode", "message": "text-only backend"}})
    )
    backend = HttpScorerBackend(url, backoff=0.01)
    with pytest.raises(UnsupportedMode):
        query(backend, nll_request("ctx", "completion"))


def test_http_malformed_body_is_protocol_error(stub_server):
    url, handler = stub_server
    handler.script.append((200, "this is not json"))
    backend = HttpScorerBackend(url, backoff=0.01)
    with pytest.raises(ProtocolError):
        query(backend, dist_request("x"))


def test_http_unreachable_is_transport_error():
    backend = HttpScorerBackend("http://127.0.0.1:1", timeout=0.2, attempts=2, backoff=0.01)
    with pytest.raises(TransportError):
        query(backend, dist_request("x"))


def test_http_capabilities(stub_server):
    url, _ = stub_server
    caps = HttpScorerBackend(url).capabilities()
    assert caps["modes"] == ["distribution", "nll"]
    assert caps["image_b64"] is True
