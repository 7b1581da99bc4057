"""Encoder and captioner backends behind the wire protocol.

Every backend preprocesses to the vision encoder's input geometry (resize
shortest side to 336, center-crop 336x336) and must be deterministic for
identical input bytes within one process lifetime.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image

INPUT_SIDE = 336


class ImageDecodeError(ValueError):
    pass


def preprocess(image_bytes: bytes) -> np.ndarray:
    """Decode, resize shortest side to 336, center-crop to 336x336 RGB."""
    try:
        img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
    except Exception as exc:
        raise ImageDecodeError(f"undecodable image: {exc}") from exc
    w, h = img.size
    scale = INPUT_SIDE / min(w, h)
    img = img.resize((max(INPUT_SIDE, round(w * scale)), max(INPUT_SIDE, round(h * scale))), Image.BICUBIC)
    w, h = img.size
    left, top = (w - INPUT_SIDE) // 2, (h - INPUT_SIDE) // 2
    img = img.crop((left, top, left + INPUT_SIDE, top + INPUT_SIDE))
    return np.asarray(img)


class HashEncoder:
    """Weight-free deterministic encoder for fixtures and offline runs.

    The vector is seeded by a digest of the preprocessed pixel buffer, so it
    is stable across processes and platforms. It carries no semantics.
    """

    def __init__(self, dim: int = 768):
        self.dim = dim

    def embed(self, image_bytes: bytes) -> list[float]:
        pixels = preprocess(image_bytes)
        digest = hashlib.blake2b(pixels.tobytes(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim).astype(np.float32).tolist()


class ClipEncoder:
    """CLIP image tower behind the same interface; needs local weights."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id)
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.model.to(device)
        self.model.eval()
        self.device = device
        self.dim = int(self.model.config.projection_dim)

    def embed(self, image_bytes: bytes) -> list[float]:
        pixels = preprocess(image_bytes)
        inputs = self.processor(images=Image.fromarray(pixels), return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            features = self.model.get_image_features(**inputs)
        # served unnormalized; normalization is the consumer's concern
        return features[0].cpu().numpy().astype(np.float32).tolist()


def load_encoder(model: str, device: str = "cpu"):
    if model.startswith("stub-"):
        return HashEncoder(dim=int(model.split("-", 1)[1]))
    return ClipEncoder(model, device=device)


class StubCaptioner:
    """Deterministic fixture captioner: summarizes coarse image statistics."""

    def caption(self, image_bytes: bytes) -> str:
        pixels = preprocess(image_bytes)
        mean = pixels.mean(axis=(0, 1))
        tone = "light" if mean.mean() > 127 else "dark"
        return (
            f"Synthetic portrait fixture, {tone} tones "
            f"(r{mean[0]:.0f} g{mean[1]:.0f} b{mean[2]:.0f}), centered subject, "
            f"{INPUT_SIDE}x{INPUT_SIDE} crop"
        )


def load_captioner(model: str):
    if not model:
        return None
    if model == "stub":
        return StubCaptioner()
    raise ValueError(f"unknown caption model {model!r}")


def truncate_at_word(text: str, max_chars: int) -> tuple[str, bool]:
    if len(text) <= max_chars:
        return text, False
    cut = text[:max_chars]
    if " " in cut:
        cut = cut.rsplit(" ", 1)[0]
    return cut, True
