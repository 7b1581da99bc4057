from __future__ import annotations

import base64
import json

import pytest

from resynth.clients import (
    DEFAULT_CAPTION_INSTRUCTION,
    CaptionRequest,
    CaptionTooLongError,
    CassetteMissError,
    FixtureCassette,
    GenerationRefusedError,
    GeneratorEndpoint,
    NetworkError,
    RateLimiter,
    ServiceClient,
    build_panel,
    caption,
    load_endpoints,
    request_digest,
    resynthesize,
)
from resynth.manifest import ImageRecord

PNG_STUB = b"\x89PNG fake image bytes"


def json_response(doc, status=200):
    return status, "application/json", json.dumps(doc).encode()


class StubTransport:
    """Programmable transport: routes by URL suffix, counts calls."""

    def __init__(self):
        self.calls = []
        self.caption_text = "a portrait"
        self.fail_captions = False
        self.refuse_sources = set()
        self.flaky_failures = 0

    def __call__(self, url, payload, timeout, headers):
        self.calls.append((url, json.loads(json.dumps(payload))))
        if self.flaky_failures > 0:
            self.flaky_failures -= 1
            raise ConnectionError("boom")
        if url.endswith("/v1/caption"):
            if self.fail_captions:
                return json_response({"error": "captioner down"}, status=500)
            return json_response({"caption": self.caption_text})
        if url.endswith("/v1/generate"):
            source = url.split("//")[1].split(".")[0]
            if source in self.refuse_sources:
                return json_response({"error": "content policy refusal"}, status=422)
            fake = base64.b64encode(source.encode() + b":" + payload["prompt"].encode())
            return json_response({"image_b64": fake.decode(), "content_type": "image/png"})
        return json_response({"error": "no such endpoint"}, status=404)


def endpoint_for(source, limit=600):
    return GeneratorEndpoint(source=source, base_url=f"http://{source}.test", rate_limit_per_min=limit)


CAPTION_EP = GeneratorEndpoint(source="captioner", base_url="http://cap.test", rate_limit_per_min=600)


class TestDigest:
    def test_stable_across_calls(self):
        payload = {"prompt": "x", "params": {"b": 1, "a": 2}}
        assert request_digest("ep", payload) == request_digest("ep", payload)

    def test_key_order_normalized(self):
        a = request_digest("ep", {"x": 1, "y": 2})
        b = request_digest("ep", {"y": 2, "x": 1})
        assert a == b

    def test_known_value_pinned(self):
        # sha256(b'ep' + b'\n' + b'{"k":"v"}'), frozen so recorded cassettes
        # stay valid across releases
        assert (
            request_digest("ep", {"k": "v"})
            == "c5302dcbf71ea5ddf0f7132b43c18d637d23e9bef5f9cc76bc2331bc41ae0d9b"
        )

    def test_endpoint_name_matters(self):
        assert request_digest("a", {"k": 1}) != request_digest("b", {"k": 1})


class TestCassette:
    def test_file_round_trip(self, tmp_path):
        cassette = FixtureCassette(mode="record")
        cassette.store("d1" * 32, "application/json", b'{"caption": "hi"}')
        cassette.store("d2" * 32, "image/png", PNG_STUB)
        path = tmp_path / "fixtures.cassette"
        cassette.save(path)
        loaded = FixtureCassette.load(path)
        assert loaded.entries == cassette.entries
        assert loaded.mode == "replay"

    def test_replay_miss_is_error(self):
        cassette = FixtureCassette(mode="replay")
        with pytest.raises(CassetteMissError):
            cassette.lookup("nope")

    def test_replay_never_touches_network(self):
        def exploding_transport(url, payload, timeout, headers):
            raise AssertionError("network attempted in replay mode")

        cassette = FixtureCassette(mode="replay")
        payload = {"prompt": "p", "params": {}}
        digest = request_digest("gen", payload)
        cassette.store(digest, "application/json", json.dumps({"image_b64": ""}).encode())
        client = ServiceClient(cassette=cassette, transport=exploding_transport)
        ctype, body = client.post("gen", "http://gen.test/v1/generate", payload)
        assert json.loads(body) == {"image_b64": ""}

    def test_record_then_replay_byte_identical(self, tmp_path):
        transport = StubTransport()
        cassette = FixtureCassette(mode="record")
        client = ServiceClient(cassette=cassette, transport=transport, sleep=lambda s: None)
        ep = endpoint_for("bing")
        ctype1, img1 = resynthesize("prompt text", ep, client), None
        path = tmp_path / "c.cassette"
        cassette.save(path)
        replay_client = ServiceClient(
            cassette=FixtureCassette.load(path),
            transport=StubTransport(),  # would give same answers, but must not be used
        )
        ctype2 = resynthesize("prompt text", ep, replay_client)
        assert ctype1 == ctype2

    def test_caption_record_then_replay_exact(self, tmp_path):
        transport = StubTransport()
        transport.caption_text = "a recorded portrait caption"
        cassette = FixtureCassette(mode="record")
        client = ServiceClient(cassette=cassette, transport=transport, sleep=lambda s: None)
        recorded = caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, client)
        path = tmp_path / "captions.cassette"
        cassette.save(path)

        def no_network(url, payload, timeout, headers):
            raise AssertionError("network attempted in replay mode")

        replay_client = ServiceClient(cassette=FixtureCassette.load(path), transport=no_network)
        assert caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, replay_client) == recorded

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            FixtureCassette(mode="live")

    def test_binary_bodies_round_trip(self, tmp_path):
        import hashlib

        from hypothesis import given, settings
        from hypothesis import strategies as st

        @settings(max_examples=50, deadline=None)
        @given(bodies=st.lists(st.binary(max_size=512), min_size=1, max_size=5))
        def check(bodies):
            cassette = FixtureCassette(mode="record")
            for body in bodies:
                cassette.store(hashlib.sha256(body).hexdigest(), "application/octet-stream", body)
            path = tmp_path / "bin.cassette"
            cassette.save(path)
            assert FixtureCassette.load(path).entries == cassette.entries

        check()


class TestCaption:
    def test_happy_path(self):
        transport = StubTransport()
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        text = caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, client)
        assert text == "a portrait"
        url, payload = transport.calls[0]
        assert payload["max_chars"] == 200
        assert payload["instruction"] == DEFAULT_CAPTION_INSTRUCTION

    def test_default_instruction_wording(self):
        assert DEFAULT_CAPTION_INSTRUCTION == (
            "Provide a detailed description of the character represented in this "
            "image in less than 200 characters"
        )
        assert len(DEFAULT_CAPTION_INSTRUCTION) <= 200

    def test_overlong_caption_retried_once_then_error(self):
        transport = StubTransport()
        transport.caption_text = "x" * 201
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        with pytest.raises(CaptionTooLongError):
            caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, client)
        assert len(transport.calls) == 2
        assert transport.calls[1][1].get("retry") == 1

    def test_overlong_then_fixed_on_retry(self):
        transport = StubTransport()
        calls = {"n": 0}

        def flaky_length(url, payload, timeout, headers):
            calls["n"] += 1
            text = "y" * 300 if calls["n"] == 1 else "short"
            return json_response({"caption": text})

        client = ServiceClient(transport=flaky_length, sleep=lambda s: None)
        assert caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, client) == "short"

    def test_network_retries_then_error(self):
        transport = StubTransport()
        transport.flaky_failures = 10
        slept = []
        client = ServiceClient(transport=transport, retries=3, sleep=slept.append)
        with pytest.raises(NetworkError):
            caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, client)
        assert len(slept) == 3  # exponential backoff sleeps between attempts

    def test_transient_failure_recovers(self):
        transport = StubTransport()
        transport.flaky_failures = 2
        client = ServiceClient(transport=transport, retries=3, sleep=lambda s: None)
        assert caption(CaptionRequest(image=PNG_STUB), CAPTION_EP, client) == "a portrait"


class TestResynthesize:
    def test_refusal_raises(self):
        transport = StubTransport()
        transport.refuse_sources = {"bing"}
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        with pytest.raises(GenerationRefusedError):
            resynthesize("prompt", endpoint_for("bing"), client)

    def test_empty_prompt_rejected(self):
        client = ServiceClient(transport=StubTransport())
        with pytest.raises(ValueError):
            resynthesize("", endpoint_for("bing"), client)

    def test_returns_bytes(self):
        client = ServiceClient(transport=StubTransport(), sleep=lambda s: None)
        ctype, body = resynthesize("prompt", endpoint_for("firefly"), client)
        assert ctype == "image/png"
        assert body.startswith(b"firefly:")


class TestRateLimiter:
    def test_limit_enforced_against_counting_stub(self):
        clock = {"t": 0.0}
        sleeps = []

        def fake_clock():
            return clock["t"]

        def fake_sleep(seconds):
            sleeps.append(seconds)
            clock["t"] += seconds

        limiter = RateLimiter(clock=fake_clock, sleep=fake_sleep)
        stamps = []
        for _ in range(7):
            limiter.acquire("ep", per_minute=3)
            stamps.append(clock["t"])
            clock["t"] += 1.0
        # within any 60s window at most 3 acquisitions
        for i in range(len(stamps)):
            window = [s for s in stamps if stamps[i] <= s < stamps[i] + 60.0]
            assert len(window) <= 3
        assert sleeps  # the limiter actually had to wait


class TestBuildPanel:
    def original(self):
        return ImageRecord(
            id="or-c0001-bing", kind="original", source="bing", character=1, prompt="pp-c0001"
        )

    def test_happy_path_complete_panel(self):
        transport = StubTransport()
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        endpoints = [endpoint_for(s) for s in ("bing", "firefly", "freepik")]
        result = build_panel(self.original(), PNG_STUB, endpoints, CAPTION_EP, client)
        assert result.complete
        assert len(result.images) == 3
        assert [img.source for img in result.images] == ["bing", "firefly", "freepik"]
        assert result.prompt.kind == "secondary"
        assert result.prompt.described_image == "or-c0001-bing"
        assert all(img.parent_original == "or-c0001-bing" for img in result.images)

    def test_caption_failure_blocks_generation(self):
        transport = StubTransport()
        transport.fail_captions = True
        client = ServiceClient(transport=transport, retries=1, sleep=lambda s: None)
        endpoints = [endpoint_for(s) for s in ("bing", "firefly")]
        with pytest.raises(NetworkError):
            build_panel(self.original(), PNG_STUB, endpoints, CAPTION_EP, client)
        assert all(url.endswith("/v1/caption") for url, _ in transport.calls)

    def test_refusal_yields_reduced_panel(self):
        transport = StubTransport()
        transport.refuse_sources = {"freepik"}
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        endpoints = [endpoint_for(s) for s in ("bing", "firefly", "freepik", "imagen3")]
        result = build_panel(self.original(), PNG_STUB, endpoints, CAPTION_EP, client)
        assert not result.complete
        assert set(result.errors) == {"freepik"}
        assert len(result.images) == 3

    def test_fourteen_endpoints(self):
        from resynth.manifest import CORE_SOURCE_NAMES, EXTENSION_SOURCE_NAMES

        transport = StubTransport()
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        endpoints = [endpoint_for(s) for s in CORE_SOURCE_NAMES + EXTENSION_SOURCE_NAMES]
        result = build_panel(self.original(), PNG_STUB, endpoints, CAPTION_EP, client)
        assert len(result.images) == 14

    def test_directory_sink(self, tmp_path):
        from resynth.clients import directory_sink

        transport = StubTransport()
        client = ServiceClient(transport=transport, sleep=lambda s: None)
        result = build_panel(
            self.original(), PNG_STUB, [endpoint_for("bing")], CAPTION_EP, client,
            sink=directory_sink(tmp_path / "imgs"),
        )
        ref = result.images[0].content_ref
        assert ref.endswith(".png")
        with open(ref, "rb") as fh:
            assert fh.read().startswith(b"bing:")


def test_load_endpoints(tmp_path):
    path = tmp_path / "endpoints.json"
    path.write_text(
        json.dumps(
            [
                {"source": "bing", "base_url": "http://bing.test", "rate_limit_per_min": 10},
                {"source": "freepik", "base_url": "http://freepik.test", "auth_env": "FP_KEY"},
            ]
        )
    )
    endpoints = load_endpoints(path)
    assert endpoints[0].rate_limit_per_min == 10
    assert endpoints[1].auth_env == "FP_KEY"
