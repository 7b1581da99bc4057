"""Synthetic source oracle.

Manufactures feature vectors with controllable per-source fingerprints,
per-character semantic content, caption-drift information loss, and isotropic
noise, so the whole attribution and evaluation stack can be validated at desk
scale with known ground truth and no real generator or encoder.

Every random draw is derived from a hashed counter over structured keys
(seed, character, source, role), never from a sequential stream, so any
single vector is reproducible in isolation and scale sweeps stay coupled.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .featurestore import FeatureStore
from .manifest import (
    CORE_SOURCE_NAMES,
    ImageRecord,
    Manifest,
    PromptRecord,
    SourceId,
    build_split,
)


@dataclass(frozen=True)
class SyntheticSource:
    source: SourceId
    fingerprint: np.ndarray = field(repr=False)  # unit norm
    strength: float = 1.0


@dataclass(frozen=True)
class SimulatorConfig:
    dim: int = 64
    source_names: tuple[str, ...] = CORE_SOURCE_NAMES
    extension_source_names: tuple[str, ...] = ()
    characters: int = 100
    fingerprint_strength: float = 1.0
    semantic_spread: float = 1.0
    caption_drift: float = 0.3
    noise: float = 0.2
    seed: int = 0
    orthogonalize: bool = True
    split_counts: tuple[int, int, int] | None = None  # default: 80/10/10 proportions

    def __post_init__(self) -> None:
        if min(self.fingerprint_strength, self.semantic_spread, self.caption_drift, self.noise) < 0:
            raise ValueError("simulator scales must be non-negative")
        n_sources = len(self.source_names) + len(self.extension_source_names)
        if self.orthogonalize and self.dim < n_sources:
            raise ValueError(
                f"dim {self.dim} < {n_sources} sources; orthogonalization impossible"
            )

    @property
    def all_source_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.source_names + self.extension_source_names))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "source_names": list(self.source_names),
            "extension_source_names": list(self.extension_source_names),
            "characters": self.characters,
            "fingerprint_strength": self.fingerprint_strength,
            "semantic_spread": self.semantic_spread,
            "caption_drift": self.caption_drift,
            "noise": self.noise,
            "seed": self.seed,
            "orthogonalize": self.orthogonalize,
            "split_counts": list(self.split_counts) if self.split_counts else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulatorConfig":
        known = {
            "dim",
            "source_names",
            "extension_source_names",
            "characters",
            "fingerprint_strength",
            "semantic_spread",
            "caption_drift",
            "noise",
            "seed",
            "orthogonalize",
            "split_counts",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown simulator config fields: {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("source_names", "extension_source_names"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("split_counts") is not None:
            kwargs["split_counts"] = tuple(kwargs["split_counts"])
        return cls(**kwargs)


def load_config(path) -> SimulatorConfig:
    """Read a simulator config file (JSON object of config fields)."""
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return SimulatorConfig.from_dict(json.load(fh))


def _key_rng(seed: int, *parts) -> np.random.Generator:
    material = "\x1f".join([str(seed), *map(str, parts)]).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def make_sources(config: SimulatorConfig) -> dict[str, SyntheticSource]:
    """Seeded per-source fingerprints, pairwise orthogonalized by default.

    Orthogonalization (Gram-Schmidt in canonical name order) makes the
    closed-form distance predictions exact; disable it to stress-test with
    correlated fingerprints.
    """
    names = config.all_source_names
    raw = [_key_rng(config.seed, "fingerprint", name).standard_normal(config.dim) for name in names]
    if config.orthogonalize:
        basis: list[np.ndarray] = []
        for v in raw:
            for b in basis:
                v = v - np.dot(v, b) * b
            basis.append(_unit(v))
        vectors = basis
    else:
        vectors = [_unit(v) for v in raw]
    out: dict[str, SyntheticSource] = {}
    for name, vec in zip(names, vectors):
        ext = name in config.extension_source_names
        out[name] = SyntheticSource(
            source=SourceId(name, extension_only=ext),
            fingerprint=vec,
            strength=config.fingerprint_strength,
        )
    return out


def _base(config: SimulatorConfig, character: int) -> np.ndarray:
    g = _key_rng(config.seed, "base", character).standard_normal(config.dim)
    return config.semantic_spread * _unit(g)


def _drift(config: SimulatorConfig, character: int, describing_source: str) -> np.ndarray:
    g = _key_rng(config.seed, "drift", character, describing_source).standard_normal(config.dim)
    return _unit(g)


def synth_feature(
    config: SimulatorConfig,
    sources: dict[str, SyntheticSource],
    character: int,
    source: str,
    parent_source: str | None = None,
) -> np.ndarray:
    """Feature vector for one image.

    An original is semantic base + fingerprint + noise. A resynthesis adds a
    caption-drift term tied to the source that produced the described
    original (``parent_source``), and carries the fingerprint of the source
    that generated it.
    """
    s = sources[source]
    vec = _base(config, character) + s.strength * s.fingerprint
    if parent_source is None:
        eps = _key_rng(config.seed, "noise", "original", character, source)
    else:
        vec = vec + config.caption_drift * _drift(config, character, parent_source)
        eps = _key_rng(config.seed, "noise", "resynthesis", character, source, parent_source)
    vec = vec + config.noise * eps.standard_normal(config.dim)
    return vec.astype(np.float32)


# -- dataset structure ----------------------------------------------------


def original_id(character: int, source: str) -> str:
    return f"or-c{character:04d}-{source}"


def resynthesis_id(character: int, parent_source: str, source: str) -> str:
    return f"re-c{character:04d}-{parent_source}-{source}"


def build_structure(config: SimulatorConfig) -> Manifest:
    """Manifest with the benchmark's shape: full panels over all sources.

    Every character is generated by every source; every original gets one
    resynthesis per source, linked through its secondary prompt.
    """
    names = config.all_source_names
    sources = tuple(
        SourceId(name, extension_only=name in config.extension_source_names) for name in names
    )
    prompts: list[PromptRecord] = []
    images: list[ImageRecord] = []
    for c in range(config.characters):
        primary_id = f"pp-c{c:04d}"
        prompts.append(
            PromptRecord(
                id=primary_id,
                kind="primary",
                text=f"synthetic character {c:04d} portrait, head and shoulders",
                character=c,
            )
        )
        for parent_source in names:
            oid = original_id(c, parent_source)
            images.append(
                ImageRecord(
                    id=oid,
                    kind="original",
                    source=parent_source,
                    character=c,
                    prompt=primary_id,
                    content_ref=f"sim:{oid}",
                )
            )
            secondary_id = f"sp-{oid}"
            prompts.append(
                PromptRecord(
                    id=secondary_id,
                    kind="secondary",
                    text=f"portrait of synthetic character {c:04d}, described from {parent_source}",
                    character=c,
                    described_image=oid,
                )
            )
            for source in names:
                rid = resynthesis_id(c, parent_source, source)
                images.append(
                    ImageRecord(
                        id=rid,
                        kind="resynthesis",
                        source=source,
                        character=c,
                        prompt=secondary_id,
                        parent_original=oid,
                        content_ref=f"sim:{rid}",
                    )
                )
    manifest = Manifest(sources=sources, images=tuple(images), prompts=tuple(prompts))
    counts = config.split_counts
    if counts is None:
        n = config.characters
        train = round(0.8 * n)
        val = round(0.1 * n)
        counts = (train, val, n - train - val)
    return build_split(manifest, *counts, seed=config.seed)


def features_for(manifest: Manifest, config: SimulatorConfig) -> FeatureStore:
    """Synthesize features for every image of a simulator-shaped manifest."""
    sources = make_sources(config)
    store = FeatureStore(dim=config.dim)
    by_id = {img.id: img for img in manifest.images}
    for img in manifest.images:
        if img.kind == "original":
            vec = synth_feature(config, sources, img.character, img.source)
        else:
            parent = by_id[img.parent_original]
            vec = synth_feature(
                config, sources, img.character, img.source, parent_source=parent.source
            )
        store.put(img.id, vec)
    return store


def generate_synthetic_dataset(config: SimulatorConfig) -> tuple[Manifest, FeatureStore]:
    manifest = build_structure(config)
    return manifest, features_for(manifest, config)


def build_extension_inputs(
    test_manifest: Manifest, new_source_names: tuple[str, ...]
) -> tuple[tuple[ImageRecord, ...], tuple[PromptRecord, ...], tuple[SourceId, ...]]:
    """Extension images for a test manifest: new originals on the test
    characters, their full-panel resyntheses, and new-source resyntheses of
    the existing originals. Feed the result to ``merge_extension``.
    """
    new_sources = tuple(SourceId(name, extension_only=True) for name in sorted(new_source_names))
    all_names = sorted(test_manifest.source_names + [s.name for s in new_sources])
    test_chars = sorted(c for c, lab in test_manifest.split.items() if lab == "test")
    images: list[ImageRecord] = []
    prompts: list[PromptRecord] = []
    for c in test_chars:
        for parent_source in (s.name for s in new_sources):
            oid = original_id(c, parent_source)
            secondary_id = f"sp-{oid}"
            images.append(
                ImageRecord(
                    id=oid,
                    kind="original",
                    source=parent_source,
                    character=c,
                    prompt=f"pp-c{c:04d}",
                    content_ref=f"sim:{oid}",
                )
            )
            prompts.append(
                PromptRecord(
                    id=secondary_id,
                    kind="secondary",
                    text=f"portrait of synthetic character {c:04d}, described from {parent_source}",
                    character=c,
                    described_image=oid,
                )
            )
            for source in all_names:
                rid = resynthesis_id(c, parent_source, source)
                images.append(
                    ImageRecord(
                        id=rid,
                        kind="resynthesis",
                        source=source,
                        character=c,
                        prompt=secondary_id,
                        parent_original=oid,
                        content_ref=f"sim:{rid}",
                    )
                )
    for original in test_manifest.originals():
        for source in (s.name for s in new_sources):
            rid = resynthesis_id(original.character, original.source, source)
            images.append(
                ImageRecord(
                    id=rid,
                    kind="resynthesis",
                    source=source,
                    character=original.character,
                    prompt=f"sp-{original.id}",
                    parent_original=original.id,
                    content_ref=f"sim:{rid}",
                )
            )
    return tuple(images), tuple(prompts), new_sources
