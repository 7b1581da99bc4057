"""Post-processing operators for the robustness task.

Ten operators, each applied alone to a test image. Parameterized operators
draw their strength per image from a hash of (seed, image id, operator), so
every method under evaluation sees byte-identical perturbed inputs and draws
are independent of evaluation order.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

OPERATORS = (
    "blur",
    "brightness",
    "contrast",
    "crop",
    "greyscale",
    "jpeg",
    "resize",
    "rotation",
    "social",
    "webp",
)

# Default parameter intervals; blur, greyscale and social take no parameter.
PARAM_RANGES: dict[str, tuple[float, float]] = {
    "brightness": (1.2, 2.4),
    "contrast": (1.2, 2.4),
    "crop": (0.5, 0.9),
    "jpeg": (50, 99),
    "resize": (0.4, 2.0),
    "rotation": (-5.0, 5.0),
    "webp": (50, 99),
}
INTEGER_PARAMS = frozenset({"jpeg", "webp"})
PARAMETER_FREE = frozenset({"blur", "greyscale", "social"})

BLUR_SIGMA = 2.0
BLUR_TRUNCATE = 3.0  # kernel radius = 3 sigma
SOCIAL_LONG_SIDE = 1080
SOCIAL_JPEG_QUALITY = 82


class PerturbError(Exception):
    pass


@dataclass(frozen=True)
class PerturbSpec:
    operator: str
    seed: int = 0
    parameter_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}")
        if self.parameter_range is None and self.operator not in PARAMETER_FREE:
            object.__setattr__(self, "parameter_range", PARAM_RANGES[self.operator])
        if self.parameter_range is not None and self.operator in PARAMETER_FREE:
            raise ValueError(f"{self.operator} takes no parameter")


@dataclass(frozen=True)
class PerturbDraw:
    image_id: str
    operator: str
    value: float | int | None


def _uniform01(seed: int, image_id: str, operator: str) -> float:
    material = f"{seed}\x1f{image_id}\x1f{operator}".encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def sample_params(spec: PerturbSpec, image_id: str) -> PerturbDraw:
    """Draw the operator parameter for one image; pure in (seed, id, op)."""
    if spec.operator in PARAMETER_FREE:
        return PerturbDraw(image_id=image_id, operator=spec.operator, value=None)
    lo, hi = spec.parameter_range
    value = lo + _uniform01(spec.seed, image_id, spec.operator) * (hi - lo)
    if spec.operator in INTEGER_PARAMS:
        return PerturbDraw(image_id=image_id, operator=spec.operator, value=round(value))
    return PerturbDraw(image_id=image_id, operator=spec.operator, value=value)


def _check_rgb(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise PerturbError(f"expected an 8-bit RGB buffer, got {arr.dtype} {arr.shape}")
    return arr


def _codec_roundtrip(image: np.ndarray, fmt: str, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format=fmt, quality=quality)
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"))


def _resize_bilinear(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if width < 1 or height < 1:
        raise PerturbError(f"degenerate output size {width}x{height}")
    out = Image.fromarray(image).resize((width, height), Image.BILINEAR)
    return np.asarray(out)


def greyscale(image: np.ndarray) -> np.ndarray:
    # Luma weights sum to 1.0, so the projection is idempotent on 8-bit data.
    arr = image.astype(np.float64)
    luma = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    luma = np.clip(np.rint(luma), 0, 255).astype(np.uint8)
    return np.repeat(luma[:, :, None], 3, axis=2)


def apply(image: np.ndarray, draw: PerturbDraw, rotation_resample: str = "bilinear") -> np.ndarray:
    """Apply one operator to an 8-bit RGB buffer; returns a new buffer.

    ``rotation_resample`` may be set to "nearest" in tests where bit-exact
    zero-angle identity matters.
    """
    arr = _check_rgb(image)
    op = draw.operator
    v = draw.value

    if op == "blur":
        blurred = gaussian_filter(
            arr.astype(np.float64), sigma=(BLUR_SIGMA, BLUR_SIGMA, 0), truncate=BLUR_TRUNCATE
        )
        return np.clip(np.rint(blurred), 0, 255).astype(np.uint8)
    if op == "brightness":
        return np.clip(np.rint(arr.astype(np.float64) * v), 0, 255).astype(np.uint8)
    if op == "contrast":
        shifted = (arr.astype(np.float64) - 128.0) * v + 128.0
        return np.clip(np.rint(shifted), 0, 255).astype(np.uint8)
    if op == "crop":
        h, w = arr.shape[:2]
        ratio = float(np.sqrt(v))  # area fraction -> per-axis side ratio
        ch, cw = int(round(h * ratio)), int(round(w * ratio))
        if ch < 1 or cw < 1:
            raise PerturbError(f"degenerate crop {cw}x{ch} from {w}x{h}")
        top, left = (h - ch) // 2, (w - cw) // 2
        return arr[top : top + ch, left : left + cw].copy()
    if op == "greyscale":
        return greyscale(arr)
    if op == "jpeg":
        return _codec_roundtrip(arr, "JPEG", int(v))
    if op == "resize":
        h, w = arr.shape[:2]
        return _resize_bilinear(arr, int(round(w * v)), int(round(h * v)))
    if op == "rotation":
        resample = Image.NEAREST if rotation_resample == "nearest" else Image.BILINEAR
        out = Image.fromarray(arr).rotate(
            angle=v, resample=resample, expand=False, fillcolor=(0, 0, 0)
        )
        return np.asarray(out)
    if op == "social":
        h, w = arr.shape[:2]
        if w >= h:
            tw, th = SOCIAL_LONG_SIDE, int(round(h * SOCIAL_LONG_SIDE / w))
        else:
            tw, th = int(round(w * SOCIAL_LONG_SIDE / h)), SOCIAL_LONG_SIDE
        resized = _resize_bilinear(arr, tw, th)
        return _codec_roundtrip(resized, "JPEG", SOCIAL_JPEG_QUALITY)
    if op == "webp":
        return _codec_roundtrip(arr, "WEBP", int(v))
    raise PerturbError(f"unknown operator {op!r}")


_OPERATOR_EXT = {"jpeg": "jpg", "social": "jpg", "webp": "webp"}


def emit_corpus(
    images: list[tuple[str, np.ndarray]],
    operators: list[str],
    seed: int,
    out_dir,
) -> None:
    """Write perturbed copies to ``<out>/<operator>/<image id>.<ext>`` plus a
    draws file recording every (image, operator, parameter) for audit."""
    from pathlib import Path

    out = Path(out_dir)
    draws_path = out / "draws.ndjson"
    out.mkdir(parents=True, exist_ok=True)
    with open(draws_path, "w", encoding="utf-8") as fh:
        for op in operators:
            spec = PerturbSpec(operator=op, seed=seed)
            op_dir = out / op
            op_dir.mkdir(exist_ok=True)
            ext = _OPERATOR_EXT.get(op, "png")
            for image_id, pixels in images:
                draw = sample_params(spec, image_id)
                result = apply(pixels, draw)
                Image.fromarray(result).save(op_dir / f"{image_id}.{ext}")
                fh.write(
                    json.dumps(
                        {"image": image_id, "operator": op, "parameter": draw.value},
                        sort_keys=True,
                    )
                    + "\n"
                )
