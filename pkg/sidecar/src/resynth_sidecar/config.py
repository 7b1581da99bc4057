from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SidecarConfig:
    """Service configuration.

    ``model`` selects the encoder: ``stub-<dim>`` is the deterministic hash
    encoder (no weights needed); any other identifier is treated as a
    CLIP-style checkpoint loaded through transformers. ``caption_model`` is
    optional; when empty the caption route answers 501.
    """

    model: str = "stub-768"
    caption_model: str = "stub"
    host: str = "127.0.0.1"
    port: int = 8871
    max_request_bytes: int = 32 * 1024 * 1024
    device: str = "cpu"
