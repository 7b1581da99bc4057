"""Networked clients for captioning and text-to-image generation.

Both capabilities sit behind a normalized JSON-over-HTTP contract (prompt
in, image bytes out; image in, caption out) with per-endpoint client-side
rate limiting and a record/replay cassette so every pipeline test can run
offline. In replay mode no network activity ever happens; an unknown
request digest is an explicit miss.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .manifest import ImageRecord, PromptRecord

DEFAULT_CAPTION_INSTRUCTION = (
    "Provide a detailed description of the character represented in this image "
    "in less than 200 characters"
)
DEFAULT_MAX_CAPTION_CHARS = 200
RETRYABLE_STATUSES = (429, 500, 502, 503, 504)
REFUSAL_STATUSES = (403, 422, 451)


class ClientError(Exception):
    pass


class NetworkError(ClientError):
    pass


class CassetteMissError(ClientError):
    pass


class CaptionTooLongError(ClientError):
    pass


class GenerationRefusedError(ClientError):
    pass


class HttpStatusError(ClientError):
    def __init__(self, status: int, body: bytes):
        self.status = status
        self.body = body
        try:
            detail = json.loads(body).get("error", "")
        except (json.JSONDecodeError, AttributeError):
            detail = body[:200]
        super().__init__(f"HTTP {status}: {detail}")


@dataclass(frozen=True)
class CaptionRequest:
    image: bytes
    max_chars: int = DEFAULT_MAX_CAPTION_CHARS
    instruction: str = DEFAULT_CAPTION_INSTRUCTION


@dataclass(frozen=True)
class GeneratorEndpoint:
    source: str
    base_url: str
    auth_env: str = ""
    rate_limit_per_min: int = 60
    timeout: float = 60.0
    params: dict = field(default_factory=dict)  # freeform, recorded in metadata

    def headers(self) -> dict[str, str]:
        token = os.environ.get(self.auth_env, "") if self.auth_env else ""
        return {"Authorization": f"Bearer {token}"} if token else {}


def load_endpoints(path) -> list[GeneratorEndpoint]:
    """Endpoint config file: JSON list of per-source endpoint objects."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [
        GeneratorEndpoint(
            source=e["source"],
            base_url=e["base_url"],
            auth_env=e.get("auth_env", ""),
            rate_limit_per_min=int(e.get("rate_limit_per_min", 60)),
            timeout=float(e.get("timeout", 60.0)),
            params=e.get("params", {}),
        )
        for e in doc
    ]


def request_digest(endpoint_name: str, payload: dict) -> str:
    """Stable digest of (endpoint name, normalized request body)."""
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    material = endpoint_name.encode("utf-8") + b"\n" + body.encode("utf-8")
    return hashlib.sha256(material).hexdigest()


# -- cassette ---------------------------------------------------------------

_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")


class FixtureCassette:
    """Keyed request digest -> recorded (content type, body bytes)."""

    def __init__(self, mode: str = "replay"):
        if mode not in ("record", "replay", "passthrough"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        self.mode = mode
        self.entries: dict[str, tuple[str, bytes]] = {}

    def lookup(self, digest: str) -> tuple[str, bytes]:
        if digest not in self.entries:
            raise CassetteMissError(f"no recorded response for digest {digest[:16]}...")
        return self.entries[digest]

    def store(self, digest: str, content_type: str, body: bytes) -> None:
        self.entries[digest] = (content_type, body)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            for digest in sorted(self.entries):
                ctype, body = self.entries[digest]
                draw = digest.encode("ascii")
                ct = ctype.encode("utf-8")
                fh.write(_U16.pack(len(draw)) + draw)
                fh.write(_U16.pack(len(ct)) + ct)
                fh.write(_U64.pack(len(body)) + body)

    @classmethod
    def load(cls, path, mode: str = "replay") -> "FixtureCassette":
        cassette = cls(mode=mode)
        with open(path, "rb") as fh:
            blob = fh.read()
        pos = 0
        while pos < len(blob):
            (dlen,) = _U16.unpack_from(blob, pos)
            pos += 2
            digest = blob[pos : pos + dlen].decode("ascii")
            pos += dlen
            (clen,) = _U16.unpack_from(blob, pos)
            pos += 2
            ctype = blob[pos : pos + clen].decode("utf-8")
            pos += clen
            (blen,) = _U64.unpack_from(blob, pos)
            pos += 8
            cassette.entries[digest] = (ctype, blob[pos : pos + blen])
            pos += blen
        return cassette


# -- transport + client ------------------------------------------------------


def requests_transport(
    url: str, payload: dict, timeout: float, headers: dict[str, str]
) -> tuple[int, str, bytes]:
    import requests

    resp = requests.post(url, json=payload, timeout=timeout, headers=headers)
    return resp.status_code, resp.headers.get("content-type", ""), resp.content


class RateLimiter:
    """Client-side sliding-window limiter, one window per endpoint."""

    def __init__(self, clock=time.monotonic, sleep=time.sleep):
        self._clock = clock
        self._sleep = sleep
        self._history: dict[str, deque[float]] = {}

    def acquire(self, key: str, per_minute: int) -> None:
        window = self._history.setdefault(key, deque())
        now = self._clock()
        while window and now - window[0] >= 60.0:
            window.popleft()
        if len(window) >= per_minute:
            self._sleep(60.0 - (now - window[0]))
            now = self._clock()
            while window and now - window[0] >= 60.0:
                window.popleft()
        window.append(now)


class ServiceClient:
    """HTTP client with retries, rate limiting and cassette record/replay."""

    def __init__(
        self,
        cassette: FixtureCassette | None = None,
        transport: Callable = requests_transport,
        retries: int = 3,
        backoff: float = 0.25,
        sleep=time.sleep,
        clock=time.monotonic,
    ):
        self.cassette = cassette
        self.transport = transport
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self.limiter = RateLimiter(clock=clock, sleep=sleep)

    def post(
        self,
        endpoint_key: str,
        url: str,
        payload: dict,
        timeout: float = 60.0,
        rate_limit_per_min: int | None = None,
        headers: dict[str, str] | None = None,
    ) -> tuple[str, bytes]:
        digest = request_digest(endpoint_key, payload)
        if self.cassette is not None and self.cassette.mode == "replay":
            return self.cassette.lookup(digest)
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            if rate_limit_per_min:
                self.limiter.acquire(endpoint_key, rate_limit_per_min)
            try:
                status, ctype, body = self.transport(url, payload, timeout, headers or {})
            except Exception as exc:  # connection/timeout level
                last_exc = NetworkError(f"{url}: {exc}")
                continue
            if status in RETRYABLE_STATUSES:
                last_exc = HttpStatusError(status, body)
                continue
            if status != 200:
                raise HttpStatusError(status, body)
            if self.cassette is not None and self.cassette.mode == "record":
                self.cassette.store(digest, ctype, body)
            return ctype, body
        raise NetworkError(f"{url}: giving up after {self.retries} retries: {last_exc}")


# -- operations ---------------------------------------------------------------


def caption(
    request: CaptionRequest,
    endpoint: GeneratorEndpoint,
    client: ServiceClient,
) -> str:
    """Secondary description of an image; rejects over-length output once
    with a retry, then fails."""
    payload = {
        "image_b64": base64.b64encode(request.image).decode("ascii"),
        "max_chars": request.max_chars,
        "instruction": request.instruction,
    }
    url = f"{endpoint.base_url.rstrip('/')}/v1/caption"
    for attempt in (0, 1):
        body_payload = payload if attempt == 0 else {**payload, "retry": 1}
        _, body = client.post(
            endpoint.source,
            url,
            body_payload,
            timeout=endpoint.timeout,
            rate_limit_per_min=endpoint.rate_limit_per_min,
            headers=endpoint.headers(),
        )
        text = json.loads(body)["caption"]
        if len(text) <= request.max_chars:
            return text
    raise CaptionTooLongError(
        f"caption still exceeds {request.max_chars} chars after one retry "
        f"({len(text)} chars); output truncation refused"
    )


def resynthesize(
    prompt: str,
    endpoint: GeneratorEndpoint,
    client: ServiceClient,
) -> tuple[str, bytes]:
    """Generate one image from a prompt; returns (content type, bytes)."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    payload = {"prompt": prompt, "params": endpoint.params}
    url = f"{endpoint.base_url.rstrip('/')}/v1/generate"
    try:
        ctype, body = client.post(
            endpoint.source,
            url,
            payload,
            timeout=endpoint.timeout,
            rate_limit_per_min=endpoint.rate_limit_per_min,
            headers=endpoint.headers(),
        )
    except HttpStatusError as exc:
        if exc.status in REFUSAL_STATUSES:
            raise GenerationRefusedError(str(exc)) from exc
        raise
    doc = json.loads(body)
    return doc.get("content_type", ctype or "image/png"), base64.b64decode(doc["image_b64"])


@dataclass(frozen=True)
class PanelResult:
    prompt: PromptRecord
    images: tuple[ImageRecord, ...]
    errors: dict[str, str]

    @property
    def complete(self) -> bool:
        return not self.errors


def memory_sink(image_id: str, content_type: str, body: bytes) -> str:
    return f"mem:{image_id}"


def directory_sink(directory) -> Callable[[str, str, bytes], str]:
    from pathlib import Path

    ext = {"image/png": "png", "image/jpeg": "jpg", "image/webp": "webp"}
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)

    def sink(image_id: str, content_type: str, body: bytes) -> str:
        path = out / f"{image_id}.{ext.get(content_type, 'bin')}"
        path.write_bytes(body)
        return str(path)

    return sink


def build_panel(
    original: ImageRecord,
    original_bytes: bytes,
    endpoints: list[GeneratorEndpoint],
    caption_endpoint: GeneratorEndpoint,
    client: ServiceClient,
    sink: Callable[[str, str, bytes], str] = memory_sink,
    max_chars: int = DEFAULT_MAX_CAPTION_CHARS,
) -> PanelResult:
    """Caption once, then fan out resynthesis to every candidate source.

    A caption failure aborts the panel before any generation call. Failed
    sources are recorded and the reduced panel is marked incomplete; the
    attribution side consumes such panels with the failed source excluded.
    """
    text = caption(CaptionRequest(image=original_bytes, max_chars=max_chars), caption_endpoint, client)
    prompt = PromptRecord(
        id=f"sp-{original.id}",
        kind="secondary",
        text=text,
        character=original.character,
        described_image=original.id,
    )
    errors: dict[str, str] = {}
    records: list[ImageRecord] = []

    def generate(endpoint: GeneratorEndpoint):
        return resynthesize(text, endpoint, client)

    with ThreadPoolExecutor(max_workers=max(1, len(endpoints))) as pool:
        futures = {e.source: pool.submit(generate, e) for e in endpoints}
    for endpoint in sorted(endpoints, key=lambda e: e.source):
        try:
            ctype, body = futures[endpoint.source].result()
        except ClientError as exc:
            errors[endpoint.source] = str(exc)
            continue
        rid = f"re-{original.id}-{endpoint.source}"
        records.append(
            ImageRecord(
                id=rid,
                kind="resynthesis",
                source=endpoint.source,
                character=original.character,
                prompt=prompt.id,
                parent_original=original.id,
                content_ref=sink(rid, ctype, body),
            )
        )
    return PanelResult(prompt=prompt, images=tuple(records), errors=errors)
