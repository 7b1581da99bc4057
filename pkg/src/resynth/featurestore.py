"""Embedding vector storage and acquisition.

A FeatureStore maps image ids to fixed-dimension float32 vectors and
persists them bit-exactly in a small binary format (magic ``RFSA``). Vectors
are stored raw, never normalized; normalization is the distance functions'
concern. Construction is single-writer, reads are safe to share.

Backends abstract where vectors come from: a deterministic hash backend for
fixtures and tests, or an HTTP sidecar speaking the ``/v1/embed`` protocol.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

import numpy as np

MAGIC = b"RFSA"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")  # magic, version, dim, count (little-endian)
_IDLEN = struct.Struct("<H")


class StoreFormatError(Exception):
    """Malformed store file; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def as_feature(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite, contiguous float32 vector of the expected dim."""
    v = np.ascontiguousarray(np.asarray(values, dtype=np.float32))
    if v.ndim != 1:
        raise ValueError(f"feature vector must be 1-d, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"feature vector has dim {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector contains NaN or Inf")
    return v


class FeatureStore:
    def __init__(self, dim: int):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._entries

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def get(self, image_id: str) -> np.ndarray:
        return self._entries[image_id]

    def put(self, image_id: str, values) -> None:
        self._entries[image_id] = as_feature(values, dim=self.dim)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureStore):
            return NotImplemented
        if self.dim != other.dim or self._entries.keys() != other._entries.keys():
            return False
        return all(
            np.array_equal(v, other._entries[k]) for k, v in self._entries.items()
        )

    def items(self):
        return self._entries.items()


def save_store(store: FeatureStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, STORE_VERSION, store.dim, len(store)))
        for image_id in store.ids():
            id_bytes = image_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValueError(f"image id too long to serialize: {image_id[:40]!r}...")
            fh.write(_IDLEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(store.get(image_id).astype("<f4", copy=False).tobytes())


def load_store(path) -> FeatureStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise StoreFormatError("truncated header", offset=len(blob))
    magic, version, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}", offset=0)
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported version {version}", offset=4)
    store = FeatureStore(dim=dim)
    pos = _HEADER.size
    vec_bytes = dim * 4
    for _ in range(count):
        if pos + _IDLEN.size > len(blob):
            raise StoreFormatError("truncated entry header", offset=pos)
        (id_len,) = _IDLEN.unpack_from(blob, pos)
        pos += _IDLEN.size
        if pos + id_len + vec_bytes > len(blob):
            raise StoreFormatError("truncated entry", offset=pos)
        image_id = blob[pos : pos + id_len].decode("utf-8")
        pos += id_len
        vec = np.frombuffer(blob[pos : pos + vec_bytes], dtype="<f4").copy()
        pos += vec_bytes
        if not np.all(np.isfinite(vec)):
            raise StoreFormatError(f"non-finite values in entry {image_id!r}", offset=pos - vec_bytes)
        store.put(image_id, vec)
    if pos != len(blob):
        raise StoreFormatError(f"{len(blob) - pos} trailing bytes", offset=pos)
    return store


# -- embedding backends ---------------------------------------------------


class EmbeddingBackend(Protocol):
    """Maps image content bytes to a fixed-dim vector, deterministically."""

    dim: int

    def embed(self, content: bytes) -> np.ndarray: ...


class HashEmbeddingBackend:
    """Deterministic fixture backend: vector seeded by a digest of the bytes.

    Identical bytes always produce identical vectors, across processes and
    platforms; there is no model behind it.
    """

    def __init__(self, dim: int = 768, salt: str = ""):
        self.dim = dim
        self.salt = salt

    def embed(self, content: bytes) -> np.ndarray:
        digest = hashlib.blake2b(self.salt.encode() + content, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim).astype(np.float32)


class EmbeddingServiceError(Exception):
    pass


class HttpEmbeddingBackend:
    """Client for the ``/v1/embed`` sidecar protocol.

    ``post`` is injectable for tests: a callable (url, json_payload, timeout)
    -> (status_code, body_bytes). The default uses requests.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "",
        timeout: float = 60.0,
        post: Callable[[str, dict, float], tuple[int, bytes]] | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._post = post or _requests_post
        health = self.healthz()
        self.dim = int(health["dim"])
        if not self.model:
            self.model = str(health.get("model", ""))

    def healthz(self) -> dict:
        import requests

        if self._post is not _requests_post:
            status, body = self._post(f"{self.base_url}/healthz", {}, self.timeout)
        else:
            resp = requests.get(f"{self.base_url}/healthz", timeout=self.timeout)
            status, body = resp.status_code, resp.content
        if status != 200:
            raise EmbeddingServiceError(f"healthz returned {status}")
        return json.loads(body)

    def embed(self, content: bytes) -> np.ndarray:
        payload = {"model": self.model, "image_b64": base64.b64encode(content).decode("ascii")}
        status, body = self._post(f"{self.base_url}/v1/embed", payload, self.timeout)
        if status != 200:
            try:
                message = json.loads(body).get("error", "")
            except (json.JSONDecodeError, AttributeError):
                message = body[:200]
            raise EmbeddingServiceError(f"embed returned {status}: {message}")
        doc = json.loads(body)
        vec = np.asarray(doc["vector"], dtype=np.float32)
        if int(doc["dim"]) != self.dim or vec.shape[0] != self.dim:
            raise EmbeddingServiceError(
                f"sidecar returned dim {doc['dim']}, configured dim is {self.dim}"
            )
        return vec


def _requests_post(url: str, payload: dict, timeout: float) -> tuple[int, bytes]:
    import requests

    resp = requests.post(url, json=payload, timeout=timeout)
    return resp.status_code, resp.content


# -- batch embedding ------------------------------------------------------


@dataclass(frozen=True)
class EmbedError:
    image_id: str
    content_ref: str
    message: str


@dataclass(frozen=True)
class EmbedBatchResult:
    store: FeatureStore
    errors: tuple[EmbedError, ...]


def read_content(content_ref: str) -> bytes:
    with open(content_ref, "rb") as fh:
        return fh.read()


def embed_batch(
    backend: EmbeddingBackend,
    images: Iterable[tuple[str, str]],
    resolver: Callable[[str], bytes] = read_content,
) -> EmbedBatchResult:
    """Embed a batch of (image id, content_ref) pairs into a fresh store.

    Unresolvable content and duplicate ids with conflicting bytes become
    per-item errors; a vector of the wrong dimension is a configuration
    fault and raises. The result is insensitive to input order.
    """
    store = FeatureStore(dim=backend.dim)
    errors: list[EmbedError] = []
    seen: dict[str, bytes] = {}
    for image_id, content_ref in sorted(images):
        try:
            content = resolver(content_ref)
        except Exception as exc:
            errors.append(EmbedError(image_id, content_ref, f"unresolvable content: {exc}"))
            continue
        if image_id in seen:
            if seen[image_id] != content:
                errors.append(
                    EmbedError(image_id, content_ref, "duplicate id with conflicting bytes")
                )
            continue
        seen[image_id] = content
        vec = backend.embed(content)
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (backend.dim,):
            raise ValueError(
                f"backend returned shape {vec.shape}, configured dim is {backend.dim}"
            )
        store.put(image_id, vec)
    return EmbedBatchResult(store=store, errors=tuple(errors))
