"""Dataset model: sources, characters, prompts, images, splits.

A manifest describes the attribution dataset as a graph: original images are
generated from primary character prompts, each original has a secondary
(caption) prompt, and each secondary prompt yields one resynthesis per
candidate source. Splits are assigned along the character index so that every
image descending from one primary prompt lands in the same set.

Manifests are treated as immutable after construction; mutating operations
(split assignment, extension merge) return new manifests.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable

FORMAT_VERSION = 1
SPLIT_LABELS = ("train", "val", "test")
MAX_PROMPT_CHARS = 200

# The benchmark dataset's candidate generators: ten core sources plus four
# test-only extension sources. Names are kept lexicographically sortable;
# canonical source order everywhere is alphabetical.
CORE_SOURCE_NAMES = (
    "bing",
    "firefly",
    "flux-dev",
    "freepik",
    "imagen3",
    "leonardo",
    "midjourney",
    "nightcafe",
    "stable-diffusion-3",
    "starry",
)
EXTENSION_SOURCE_NAMES = ("auraflow", "hunyuan", "pixart", "playground")
_COMMERCIAL = {"bing", "firefly", "imagen3", "leonardo", "midjourney", "nightcafe", "starry"}


class ManifestError(Exception):
    """Base class for dataset-model faults."""


class SplitArityError(ManifestError):
    """Split counts do not sum to the number of distinct characters."""


class LeakageError(ManifestError):
    """An extension image references a non-test character."""


class ManifestFormatError(ManifestError):
    """A manifest file is malformed."""


@dataclass(frozen=True, order=True)
class SourceId:
    name: str
    commercial: bool = False
    extension_only: bool = False


def default_sources(include_extension: bool = False) -> tuple[SourceId, ...]:
    """SourceId records for the benchmark's core (and extension) generators."""
    out = [SourceId(name, commercial=name in _COMMERCIAL) for name in CORE_SOURCE_NAMES]
    if include_extension:
        out.extend(
            SourceId(name, commercial=False, extension_only=True)
            for name in EXTENSION_SOURCE_NAMES
        )
    return tuple(sorted(out, key=lambda s: s.name))


@dataclass(frozen=True)
class PromptRecord:
    id: str
    kind: str  # "primary" | "secondary"
    text: str
    character: int
    described_image: str | None = None  # secondary prompts only


@dataclass(frozen=True)
class ImageRecord:
    id: str
    kind: str  # "original" | "resynthesis"
    source: str
    character: int
    prompt: str
    parent_original: str | None = None  # resyntheses only
    content_ref: str = ""


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    image: str | None = None
    source: str | None = None
    character: int | None = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    counts: dict

    @property
    def valid(self) -> bool:
        return not self.violations


@dataclass
class Manifest:
    sources: tuple[SourceId, ...] = ()
    images: tuple[ImageRecord, ...] = ()
    prompts: tuple[PromptRecord, ...] = ()
    split: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sources = tuple(sorted(self.sources, key=lambda s: s.name))
        self.images = tuple(self.images)
        self.prompts = tuple(self.prompts)
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise ManifestError("duplicate source names in manifest")
        self._images_by_id = {img.id: img for img in self.images}
        if len(self._images_by_id) != len(self.images):
            raise ManifestError("duplicate image ids in manifest")
        self._prompts_by_id = {p.id: p for p in self.prompts}
        # original id -> {source name -> resynthesis id}, canonical source order
        panels: dict[str, dict[str, str]] = {}
        for img in self.images:
            if img.kind == "resynthesis" and img.parent_original is not None:
                panels.setdefault(img.parent_original, {})[img.source] = img.id
        self._panels = {
            oid: dict(sorted(by_source.items())) for oid, by_source in panels.items()
        }

    # -- read-only views -------------------------------------------------

    @property
    def source_names(self) -> list[str]:
        return [s.name for s in self.sources]

    @property
    def core_source_names(self) -> list[str]:
        return [s.name for s in self.sources if not s.extension_only]

    @property
    def extension_source_names(self) -> list[str]:
        return [s.name for s in self.sources if s.extension_only]

    def image(self, image_id: str) -> ImageRecord:
        return self._images_by_id[image_id]

    def prompt(self, prompt_id: str) -> PromptRecord:
        return self._prompts_by_id[prompt_id]

    def characters(self) -> list[int]:
        chars = {img.character for img in self.images}
        chars.update(p.character for p in self.prompts)
        return sorted(chars)

    def originals(self) -> list[ImageRecord]:
        """Originals in ascending (character, source) order."""
        out = [img for img in self.images if img.kind == "original"]
        out.sort(key=lambda img: (img.character, img.source))
        return out

    def resyntheses(self) -> list[ImageRecord]:
        return [img for img in self.images if img.kind == "resynthesis"]


def resyntheses_of(manifest: Manifest, original_id: str) -> dict[str, str]:
    """Return the resynthesis panel of one original, keyed by source name.

    The mapping iterates in canonical (lexicographic) source order. Raises
    KeyError for an unknown id and ValueError when the id is not an original.
    """
    img = manifest._images_by_id.get(original_id)
    if img is None:
        raise KeyError(f"unknown image id: {original_id!r}")
    if img.kind != "original":
        raise ValueError(f"image {original_id!r} has kind {img.kind!r}, expected original")
    return dict(manifest._panels.get(original_id, {}))


def build_split(
    manifest: Manifest,
    train_chars: int,
    val_chars: int,
    test_chars: int,
    seed: int,
) -> Manifest:
    """Assign characters to train/val/test by seeded shuffle + contiguous cut.

    Classes stay balanced by construction because every character appears
    under every source.
    """
    chars = manifest.characters()
    if train_chars + val_chars + test_chars != len(chars):
        raise SplitArityError(
            f"split counts {train_chars}+{val_chars}+{test_chars} != "
            f"{len(chars)} distinct characters"
        )
    shuffled = list(chars)
    random.Random(seed).shuffle(shuffled)
    split: dict[int, str] = {}
    for i, c in enumerate(shuffled):
        if i < train_chars:
            split[c] = "train"
        elif i < train_chars + val_chars:
            split[c] = "val"
        else:
            split[c] = "test"
    return replace(manifest, split=split)


def split_subset(manifest: Manifest, label: str) -> Manifest:
    """Extract the sub-manifest of one split (sources are kept as-is)."""
    if label not in SPLIT_LABELS:
        raise ValueError(f"unknown split label {label!r}")
    keep = {c for c, lab in manifest.split.items() if lab == label}
    return Manifest(
        sources=manifest.sources,
        images=tuple(img for img in manifest.images if img.character in keep),
        prompts=tuple(p for p in manifest.prompts if p.character in keep),
        split={c: lab for c, lab in manifest.split.items() if c in keep},
    )


def merge_extension(
    test_manifest: Manifest,
    extension_images: Iterable[ImageRecord],
    new_sources: Iterable[SourceId],
    extension_prompts: Iterable[PromptRecord] = (),
) -> Manifest:
    """Merge extension images and sources into a test manifest.

    Extension images may reference only test-split characters; any other
    character raises LeakageError. Extension characters reuse test indices,
    extension originals carry fresh image ids.
    """
    extension_images = tuple(extension_images)
    new_sources = tuple(new_sources)
    test_chars = {c for c, lab in test_manifest.split.items() if lab == "test"}
    for img in extension_images:
        if img.character not in test_chars:
            raise LeakageError(
                f"extension image {img.id!r} references character "
                f"{img.character}, which is not in the test split"
            )
    for img in extension_images:
        if img.id in test_manifest._images_by_id:
            raise ManifestError(f"extension image id collision: {img.id!r}")
    return Manifest(
        sources=test_manifest.sources + new_sources,
        images=test_manifest.images + extension_images,
        prompts=test_manifest.prompts + tuple(extension_prompts),
        split=dict(test_manifest.split),
    )


def _expected_panel(manifest: Manifest, original: ImageRecord) -> list[str]:
    # With extension sources present, test-character originals carry the full
    # panel; everything else covers the core sources only.
    ext = manifest.extension_source_names
    if ext and manifest.split.get(original.character) == "test":
        return manifest.source_names
    return manifest.core_source_names


def validate_manifest(manifest: Manifest) -> ValidationReport:
    """Check structural invariants; violations are data, not faults."""
    violations: list[Violation] = []
    known_sources = set(manifest.source_names)

    for img in manifest.images:
        if img.source not in known_sources:
            violations.append(
                Violation(
                    "unknown_source",
                    f"image {img.id!r} references unknown source {img.source!r}",
                    image=img.id,
                    source=img.source,
                )
            )

    # Panel completeness: one resynthesis per eligible source per original.
    seen_pairs: dict[tuple[str, str], int] = {}
    for img in manifest.resyntheses():
        if img.parent_original is None:
            violations.append(
                Violation(
                    "orphan_resynthesis",
                    f"resynthesis {img.id!r} has no parent original",
                    image=img.id,
                )
            )
            continue
        parent = manifest._images_by_id.get(img.parent_original)
        if parent is None or parent.kind != "original":
            violations.append(
                Violation(
                    "orphan_resynthesis",
                    f"resynthesis {img.id!r} references missing or non-original "
                    f"parent {img.parent_original!r}",
                    image=img.id,
                )
            )
            continue
        if img.character != parent.character:
            violations.append(
                Violation(
                    "character_mismatch",
                    f"resynthesis {img.id!r} has character {img.character}, "
                    f"parent {parent.id!r} has {parent.character}",
                    image=img.id,
                    character=img.character,
                )
            )
        key = (img.parent_original, img.source)
        seen_pairs[key] = seen_pairs.get(key, 0) + 1

    for original in manifest.originals():
        if original.parent_original is not None:
            violations.append(
                Violation(
                    "original_with_parent",
                    f"original {original.id!r} must not have a parent",
                    image=original.id,
                )
            )
        for source in _expected_panel(manifest, original):
            n = seen_pairs.get((original.id, source), 0)
            if n == 0:
                violations.append(
                    Violation(
                        "missing_resynthesis",
                        f"original {original.id!r} has no resynthesis from "
                        f"source {source!r}",
                        image=original.id,
                        source=source,
                    )
                )
            elif n > 1:
                violations.append(
                    Violation(
                        "duplicate_resynthesis",
                        f"original {original.id!r} has {n} resyntheses from "
                        f"source {source!r}",
                        image=original.id,
                        source=source,
                    )
                )

    # Split purity: every image of a character shares one split label.
    if manifest.split:
        for img in manifest.images:
            if img.character not in manifest.split:
                violations.append(
                    Violation(
                        "missing_split",
                        f"character {img.character} of image {img.id!r} has no "
                        f"split assignment",
                        image=img.id,
                        character=img.character,
                    )
                )

    # Prompt constraints and secondary-prompt linkage.
    for p in manifest.prompts:
        if len(p.text) > MAX_PROMPT_CHARS:
            violations.append(
                Violation(
                    "prompt_length",
                    f"prompt {p.id!r} has {len(p.text)} characters "
                    f"(limit {MAX_PROMPT_CHARS})",
                )
            )
    for img in manifest.resyntheses():
        p = manifest._prompts_by_id.get(img.prompt)
        if p is None:
            continue  # prompt table may be partial; ids are opaque
        if p.kind != "secondary":
            violations.append(
                Violation(
                    "prompt_kind",
                    f"resynthesis {img.id!r} uses non-secondary prompt {p.id!r}",
                    image=img.id,
                )
            )
        elif p.described_image is not None and p.described_image != img.parent_original:
            violations.append(
                Violation(
                    "prompt_linkage",
                    f"resynthesis {img.id!r} uses prompt {p.id!r} describing "
                    f"{p.described_image!r}, not its parent {img.parent_original!r}",
                    image=img.id,
                )
            )

    originals = manifest.originals()
    resyn = manifest.resyntheses()
    per_split = {lab: [0, 0] for lab in SPLIT_LABELS}
    for img in manifest.images:
        lab = manifest.split.get(img.character)
        if lab in per_split:
            per_split[lab][0 if img.kind == "original" else 1] += 1
    counts = {
        "originals": len(originals),
        "resyntheses": len(resyn),
        "characters": len(manifest.characters()),
        "sources": len(manifest.sources),
        "per_split": {
            lab: {"originals": o, "resyntheses": r}
            for lab, (o, r) in per_split.items()
        },
    }
    return ValidationReport(violations=tuple(violations), counts=counts)


# -- newline-delimited manifest file format ------------------------------


def _source_to_record(s: SourceId) -> dict:
    return {
        "record_type": "source",
        "name": s.name,
        "commercial": s.commercial,
        "extension_only": s.extension_only,
    }


def _prompt_to_record(p: PromptRecord) -> dict:
    return {
        "record_type": "prompt",
        "id": p.id,
        "kind": p.kind,
        "text": p.text,
        "character": p.character,
        "described_image": p.described_image,
    }


def _image_to_record(img: ImageRecord) -> dict:
    return {
        "record_type": "image",
        "id": img.id,
        "kind": img.kind,
        "source": img.source,
        "character": img.character,
        "prompt": img.prompt,
        "parent_original": img.parent_original,
        "content_ref": img.content_ref,
    }


def save_manifest(manifest: Manifest, path) -> None:
    """Write the manifest as UTF-8 newline-delimited records."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record_type": "header", "format_version": FORMAT_VERSION}) + "\n")
        for s in manifest.sources:
            fh.write(json.dumps(_source_to_record(s), sort_keys=True) + "\n")
        for p in sorted(manifest.prompts, key=lambda p: p.id):
            fh.write(json.dumps(_prompt_to_record(p), sort_keys=True, ensure_ascii=False) + "\n")
        for img in sorted(manifest.images, key=lambda i: i.id):
            fh.write(json.dumps(_image_to_record(img), sort_keys=True) + "\n")
        for c in sorted(manifest.split):
            fh.write(
                json.dumps(
                    {"record_type": "split", "character": c, "subset": manifest.split[c]},
                    sort_keys=True,
                )
                + "\n"
            )


def load_manifest(path) -> Manifest:
    """Read a manifest file; the versioned header record must come first."""
    sources: list[SourceId] = []
    images: list[ImageRecord] = []
    prompts: list[PromptRecord] = []
    split: dict[int, str] = {}
    saw_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestFormatError(f"{path}:{lineno}: invalid record: {exc}") from exc
            rtype = rec.get("record_type")
            if not saw_header:
                if rtype != "header" or rec.get("format_version") != FORMAT_VERSION:
                    raise ManifestFormatError(
                        f"{path}:{lineno}: missing or unsupported header record: {line[:80]}"
                    )
                saw_header = True
                continue
            if rtype == "source":
                sources.append(
                    SourceId(
                        name=rec["name"],
                        commercial=bool(rec.get("commercial", False)),
                        extension_only=bool(rec.get("extension_only", False)),
                    )
                )
            elif rtype == "prompt":
                prompts.append(
                    PromptRecord(
                        id=rec["id"],
                        kind=rec["kind"],
                        text=rec["text"],
                        character=int(rec["character"]),
                        described_image=rec.get("described_image"),
                    )
                )
            elif rtype == "image":
                images.append(
                    ImageRecord(
                        id=rec["id"],
                        kind=rec["kind"],
                        source=rec["source"],
                        character=int(rec["character"]),
                        prompt=rec["prompt"],
                        parent_original=rec.get("parent_original"),
                        content_ref=rec.get("content_ref", ""),
                    )
                )
            elif rtype == "split":
                split[int(rec["character"])] = rec["subset"]
            elif rtype == "header":
                raise ManifestFormatError(f"{path}:{lineno}: duplicate header record")
            else:
                raise ManifestFormatError(f"{path}:{lineno}: unknown record_type {rtype!r}")
    if not saw_header:
        raise ManifestFormatError(f"{path}: empty file, header record required")
    return Manifest(sources=tuple(sources), images=tuple(images), prompts=tuple(prompts), split=split)
