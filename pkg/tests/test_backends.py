from __future__ import annotations

import json

import pytest

from storylogic.backends import (
    BackendError,
    BackendRequest,
    BackendResponse,
    BackendSet,
    Capability,
    HttpBackend,
    ImageRef,
    MockBackend,
    ProviderError,
    RecordingBackend,
    RetryPolicy,
    SlidingWindowRateLimiter,
    TransportError,
    build_backends,
    embed_batch,
    write_fixture,
)

from helpers import ScriptedBackend, tiny_png


def chat_req(prompt: str, model="m") -> BackendRequest:
    return BackendRequest(capability=Capability.CHAT, model_id=model, prompt=prompt)


# ---------------------------------------------------------------------------
# fingerprints
# ---------------------------------------------------------------------------

def test_fingerprint_deterministic_and_content_addressed(tmp_path):
    a = chat_req("hello")
    b = chat_req("hello")
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != chat_req("other").fingerprint
    assert a.fingerprint != BackendRequest(capability=Capability.VQA, model_id="m", prompt="hello").fingerprint

    img = tmp_path / "x.png"
    img.write_bytes(tiny_png("seed"))
    moved = tmp_path / "elsewhere.png"
    moved.write_bytes(tiny_png("seed"))
    r1 = BackendRequest(capability=Capability.CAPTION, model_id="m", prompt="p", images=(ImageRef.from_path(img),))
    r2 = BackendRequest(capability=Capability.CAPTION, model_id="m", prompt="p", images=(ImageRef.from_path(moved),))
    assert r1.fingerprint == r2.fingerprint  # content hash, not path


# ---------------------------------------------------------------------------
# mock backend
# ---------------------------------------------------------------------------

def test_mock_exact_fixture_verbatim(tmp_path):
    req = chat_req("what happens next?")
    write_fixture(tmp_path, req, BackendResponse(capability=Capability.CHAT, text="the wolf arrives"), alias="next")
    mock = MockBackend(tmp_path)
    assert mock.invoke(req).text == "the wolf arrives"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["aliases"]["next"] == req.fingerprint


def test_mock_missing_fixture_error(tmp_path):
    mock = MockBackend(tmp_path)
    with pytest.raises(BackendError, match="no fixture for fingerprint"):
        mock.invoke(chat_req("unknown"))


def test_mock_is_pure_across_instances(tmp_path):
    req = chat_req("stable?")
    write_fixture(tmp_path, req, BackendResponse(capability=Capability.CHAT, text="yes"))
    assert MockBackend(tmp_path).invoke(req).text == MockBackend(tmp_path).invoke(req).text == "yes"


def test_mock_rule_matching_and_generators(tmp_path):
    manifest = {
        "rules": [
            {"alias": "scorer", "capability": "chat", "contains": ["causal reasoning"], "response": {"text": "Score: 0.9"}},
            {"alias": "imgs", "capability": "generate_image", "generator": {"type": "solid_png", "size": 16}},
            {
                "alias": "embed",
                "capability": "embed",
                "generator": {"type": "unit_basis", "dim": 16, "vocab": {"a": 0, "b": 1}},
            },
            {"alias": "caption", "capability": "caption", "generator": {"type": "echo_sha", "prefix": "panel "}},
        ]
    }
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    mock = MockBackend(tmp_path)

    assert mock.invoke(chat_req("you are a causal reasoning expert")).text == "Score: 0.9"
    with pytest.raises(BackendError, match="no fixture"):
        mock.invoke(chat_req("different prompt"))

    img = mock.invoke(BackendRequest(capability=Capability.GENERATE_IMAGE, model_id="m", prompt="a pig"))
    img2 = mock.invoke(BackendRequest(capability=Capability.GENERATE_IMAGE, model_id="m", prompt="a pig"))
    assert img.image_bytes == img2.image_bytes and img.image_bytes[:4] == b"\x89PNG"
    assert img.image_bytes != mock.invoke(
        BackendRequest(capability=Capability.GENERATE_IMAGE, model_id="m", prompt="a wolf")
    ).image_bytes

    ea = mock.invoke(BackendRequest(capability=Capability.EMBED, model_id="m", prompt="a")).embedding
    eb = mock.invoke(BackendRequest(capability=Capability.EMBED, model_id="m", prompt="b")).embedding
    assert sum(x * x for x in ea) == 1.0 and sum(x * x for x in eb) == 1.0
    assert sum(x * y for x, y in zip(ea, eb)) == 0.0  # orthonormal by fixture definition

    cap = mock.invoke(
        BackendRequest(capability=Capability.CAPTION, model_id="m", prompt="describe", images=(ImageRef.from_bytes(tiny_png("z")),))
    )
    assert cap.text.startswith("panel ")


def test_mock_fixture_capability_mismatch_rejected(tmp_path):
    req = chat_req("x")
    path = tmp_path / "chat" / f"{req.fingerprint}.json"
    path.parent.mkdir(parents=True)
    path.write_text(json.dumps({"capability": "vqa", "text": "yes"}))
    with pytest.raises(BackendError, match="capability"):
        MockBackend(tmp_path).invoke(req)


def test_recording_backend_captures_fixture(tmp_path):
    scripted = ScriptedBackend(chat="recorded reply")
    recorder = RecordingBackend(scripted, tmp_path)
    req = chat_req("capture me")
    assert recorder.invoke(req).text == "recorded reply"
    assert MockBackend(tmp_path).invoke(req).text == "recorded reply"


# ---------------------------------------------------------------------------
# retry + tracing
# ---------------------------------------------------------------------------

class FlakyBackend(ScriptedBackend):
    def __init__(self, failures: int, **scripts):
        super().__init__(**scripts)
        self.failures = failures

    def _call(self, req):
        if self.failures > 0:
            self.failures -= 1
            self.calls.append(req)
            raise TransportError("connection reset")
        return super()._call(req)


def test_retry_two_transient_failures_then_success():
    backend = FlakyBackend(2, chat="finally")
    sink: list[dict] = []
    policy = RetryPolicy(max_attempts=3, base_backoff_ms=0.0)
    resp = backend.invoke(chat_req("x"), policy=policy, trace=sink.append, sleeper=lambda s: None)
    assert resp.text == "finally"
    attempts = [e for e in sink if e["kind"] == "backend_attempt"]
    assert [e["attempt"] for e in attempts] == [1, 2, 3]
    assert [e["outcome"] for e in attempts] == ["error", "error", "ok"]


def test_retry_exhaustion_raises_terminal():
    backend = FlakyBackend(5, chat="never")
    policy = RetryPolicy(max_attempts=3, base_backoff_ms=0.0)
    with pytest.raises(BackendError, match="after 3 attempt"):
        backend.invoke(chat_req("x"), policy=policy, sleeper=lambda s: None)


def test_non_retryable_error_fails_fast():
    calls = {"n": 0}

    class AuthFail(ScriptedBackend):
        def _call(self, req):
            calls["n"] += 1
            raise ProviderError("bad key", status_code=401)

    with pytest.raises(BackendError) as excinfo:
        AuthFail().invoke(chat_req("x"), policy=RetryPolicy(max_attempts=5, base_backoff_ms=0.0), sleeper=lambda s: None)
    assert excinfo.value.status == "401"
    assert calls["n"] == 1


def test_capability_mismatch_response_rejected():
    bad = ScriptedBackend(chat=BackendResponse(capability=Capability.VQA, text="yes"))
    with pytest.raises(BackendError, match="returned vqa content"):
        bad.invoke(chat_req("x"))


def test_retry_policy_validation_and_backoff():
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)
    p = RetryPolicy(max_attempts=3, base_backoff_ms=100, backoff_multiplier=3.0)
    assert p.backoff_ms(1) == 100 and p.backoff_ms(2) == 300 and p.backoff_ms(3) == 900
    assert p.is_retryable("503") and p.is_retryable("429") and p.is_retryable("transport")
    assert not p.is_retryable("401")


# ---------------------------------------------------------------------------
# rate limiting
# ---------------------------------------------------------------------------

def test_rate_limiter_bounds_requests_per_window():
    clock = {"now": 0.0}
    sleeps: list[float] = []

    def fake_sleep(s: float) -> None:
        sleeps.append(s)
        clock["now"] += s

    limiter = SlidingWindowRateLimiter(max_requests=3, window_ms=1000, clock=lambda: clock["now"], sleeper=fake_sleep)
    stamps = []
    for _ in range(7):
        limiter.acquire()
        stamps.append(clock["now"])
        clock["now"] += 0.01
    # verify: no window of 1s contains more than 3 acquisitions
    for i, t in enumerate(stamps):
        in_window = [s for s in stamps if t <= s < t + 1.0]
        assert len(in_window) <= 3
    assert sleeps  # the limiter actually had to wait


def test_rate_limited_transport_call_count():
    clock = {"now": 0.0}
    seen: list[float] = []

    def transport(method, url, body, headers, timeout):
        seen.append(clock["now"])
        return 200, {"choices": [{"message": {"content": "ok"}}]}

    limiter = SlidingWindowRateLimiter(
        max_requests=2, window_ms=1000, clock=lambda: clock["now"], sleeper=lambda s: clock.__setitem__("now", clock["now"] + s)
    )
    backend = HttpBackend("http://gw", "m", rate_limiter=limiter, transport=transport)
    for _ in range(5):
        backend.invoke(chat_req("x"))
    for t in seen:
        assert len([s for s in seen if t <= s < t + 1.0]) <= 2


# ---------------------------------------------------------------------------
# http wire shapes
# ---------------------------------------------------------------------------

def test_http_chat_and_embed_and_images_wire_format(tmp_path):
    requests_seen = []

    def transport(method, url, body, headers, timeout):
        requests_seen.append((method, url, body, headers))
        if url.endswith("/chat/completions"):
            return 200, {"choices": [{"message": {"content": "hi"}}]}
        if url.endswith("/embeddings"):
            return 200, {"data": [{"embedding": [0.0, 1.0]}]}
        if url.endswith("/images/generations") or url.endswith("/images/edits"):
            import base64

            return 200, {"data": [{"b64_json": base64.b64encode(tiny_png("gen")).decode()}]}
        return 404, {"error": "no route"}

    backend = HttpBackend("http://gw/v1", "model-x", api_key="sk-test", transport=transport)
    assert backend.invoke(chat_req("hello", model="model-x")).text == "hi"
    _, url, body, headers = requests_seen[0]
    assert url == "http://gw/v1/chat/completions"
    assert body["model"] == "model-x"
    assert headers["Authorization"] == "Bearer sk-test"

    emb = backend.invoke(BackendRequest(capability=Capability.EMBED, model_id="model-x", prompt="text"))
    assert emb.embedding == (0.0, 1.0)

    img = tmp_path / "in.png"
    img.write_bytes(tiny_png("in"))
    gen = backend.invoke(BackendRequest(capability=Capability.GENERATE_IMAGE, model_id="model-x", prompt="a pig"))
    assert gen.image_bytes[:4] == b"\x89PNG"
    edited = backend.invoke(
        BackendRequest(capability=Capability.EDIT_IMAGE, model_id="model-x", prompt="add pot", images=(ImageRef.from_path(img),))
    )
    assert edited.image_bytes[:4] == b"\x89PNG"
    edit_body = requests_seen[-1][2]
    assert edit_body["image"].startswith("data:image/png;base64,")

    vqa = backend.invoke(
        BackendRequest(capability=Capability.VQA, model_id="model-x", prompt="is there a pig?", images=(ImageRef.from_path(img),))
    )
    assert vqa.text == "hi"
    vqa_body = requests_seen[-1][2]
    parts = vqa_body["messages"][0]["content"]
    assert parts[0] == {"type": "text", "text": "is there a pig?"}
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")


def test_http_429_retry_then_success():
    calls = {"n": 0}

    def transport(method, url, body, headers, timeout):
        calls["n"] += 1
        if calls["n"] < 3:
            return 429, {"error": "slow down"}
        return 200, {"choices": [{"message": {"content": "done"}}]}

    backend = HttpBackend("http://gw", "m", transport=transport)
    resp = backend.invoke(chat_req("x"), policy=RetryPolicy(max_attempts=3, base_backoff_ms=0.0), sleeper=lambda s: None)
    assert resp.text == "done" and calls["n"] == 3


# ---------------------------------------------------------------------------
# embed_batch
# ---------------------------------------------------------------------------

def test_embed_batch_uniform_and_identical_inputs():
    backend = ScriptedBackend(embed=lambda req: [1.0, 0.0] if req.prompt == "a" else [0.0, 1.0])
    vectors = embed_batch(backend, ["a", "a"], "m")
    assert vectors[0] == vectors[1] == (1.0, 0.0)


def test_embed_batch_empty_and_mixed_dim_errors():
    backend = ScriptedBackend(embed=[[1.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(BackendError, match="non-empty"):
        embed_batch(backend, [], "m")
    with pytest.raises(BackendError, match="mixed embedding dimensionality"):
        embed_batch(backend, ["a", "b"], "m")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_build_backends_mock_covers_all_roles(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"rules": []}))
    bs = build_backends({}, mock_dir=tmp_path)
    for role in ("chat", "generate_image", "edit_image", "caption", "embed", "vqa"):
        assert bs.get(role) is not None
    assert bs.get("rating") is bs.get("chat")


def test_build_backends_http_from_config(monkeypatch):
    monkeypatch.setenv("MY_KEY", "sk-secret")
    config = {
        "backends": {
            "chat": {
                "endpoint": "http://gw/v1",
                "model_id": "m1",
                "api_key_env": "MY_KEY",
                "timeout_ms": 5000,
                "retry": {"max_attempts": 4},
                "rate_limit": {"max_requests": 5, "window_ms": 1000},
            }
        }
    }
    bs = build_backends(config)
    chat = bs.get("chat")
    assert isinstance(chat, HttpBackend)
    assert chat.api_key == "sk-secret"
    assert bs.policy("chat").max_attempts == 4
    assert bs.model_id("chat") == "m1"
    assert bs.get("embed") is None


def test_build_backends_rejects_unknown_role_and_missing_endpoint():
    from storylogic.backends import ConfigError

    with pytest.raises(ConfigError, match="unknown backend role"):
        build_backends({"backends": {"painter": {"endpoint": "x"}}})
    with pytest.raises(ConfigError, match="missing endpoint"):
        build_backends({"backends": {"chat": {}}})


def test_backend_set_require_names_capability():
    bs = BackendSet()
    with pytest.raises(BackendError, match="no backend configured for capability 'edit_image'"):
        bs.require("edit_image")
