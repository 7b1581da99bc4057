"""FastAPI app implementing the embed/caption wire protocol.

Routes: POST /v1/embed, POST /v1/caption, GET /healthz. Request bodies are
JSON with base64 image payloads; non-200 responses carry ``{"error": ...}``.
Model weights load once at startup and are read-only afterwards, so request
handling is stateless and safe under concurrency.
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import SidecarConfig
from .encoders import ImageDecodeError, load_captioner, load_encoder, truncate_at_word


class EmbedRequest(BaseModel):
    model: str = ""
    image_b64: str


class CaptionRequest(BaseModel):
    image_b64: str
    max_chars: int = 200
    instruction: str = ""  # accepted for audit, fixed models may ignore it


def error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(config: SidecarConfig | None = None) -> FastAPI:
    config = config or SidecarConfig()
    app = FastAPI(title="resynth-sidecar")

    try:
        encoder = load_encoder(config.model, device=config.device)
    except Exception as exc:  # model runtime unavailable: serve 503s
        encoder = None
        app.state.load_error = str(exc)
    captioner = load_captioner(config.caption_model)

    app.state.config = config
    app.state.encoder = encoder
    app.state.captioner = captioner

    @app.middleware("http")
    async def limit_body_size(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > config.max_request_bytes:
            return error(413, f"request exceeds {config.max_request_bytes} bytes")
        return await call_next(request)

    def decode_payload(image_b64: str) -> bytes:
        try:
            return base64.b64decode(image_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ImageDecodeError(f"invalid base64 payload: {exc}") from exc

    @app.get("/healthz")
    def healthz():
        if encoder is None:
            return error(503, f"model not loaded: {app.state.load_error}")
        return {
            "model": config.model,
            "dim": encoder.dim,
            "captioning": captioner is not None,
            "normalized": False,
        }

    @app.post("/v1/embed")
    def embed(req: EmbedRequest):
        if encoder is None:
            return error(503, f"model not loaded: {app.state.load_error}")
        if req.model and req.model != config.model:
            return error(400, f"served model is {config.model!r}, not {req.model!r}")
        try:
            vector = encoder.embed(decode_payload(req.image_b64))
        except ImageDecodeError as exc:
            return error(400, str(exc))
        return {
            "dim": encoder.dim,
            "vector": vector,
            "model": config.model,
            "normalized": False,
        }

    @app.post("/v1/caption")
    def caption(req: CaptionRequest):
        if captioner is None:
            return error(501, "captioning not configured")
        try:
            text = captioner.caption(decode_payload(req.image_b64))
        except ImageDecodeError as exc:
            return error(400, str(exc))
        text, truncated = truncate_at_word(text, req.max_chars)
        return {
            "caption": text,
            "model": config.caption_model,
            "truncated": truncated,
        }

    return app
