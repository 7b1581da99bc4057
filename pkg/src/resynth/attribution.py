"""Resynthesis-based source attribution.

An original image is attributed to the candidate source whose resynthesis is
nearest in feature space. Ties break to the lexicographically-first source
name, matching the dataset's canonical source order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .featurestore import FeatureStore
from .manifest import Manifest, resyntheses_of
from .metrics import DistanceKind, panel_distances


@dataclass(frozen=True)
class AttributionResult:
    image: str
    predicted: str
    distances: dict[str, float]  # canonical source order
    distance_kind: str
    truth: str | None = None
    panel_complete: bool = True


@dataclass(frozen=True)
class AttributionRun:
    results: tuple[AttributionResult, ...]
    errors: tuple[tuple[str, str], ...] = ()
    coverage: float = 1.0


def attribute(
    original,
    panel: Mapping[str, np.ndarray],
    kind: DistanceKind,
    image_id: str = "",
    truth: str | None = None,
    panel_complete: bool = True,
) -> AttributionResult:
    """Attribute one original feature vector against a resynthesis panel."""
    if not panel:
        raise ValueError("panel must not be empty")
    names = sorted(panel)
    matrix = np.stack([np.asarray(panel[name], dtype=np.float64) for name in names])
    dists = panel_distances(kind, np.asarray(original, dtype=np.float64), matrix)
    best = 0
    for i in range(1, len(names)):
        if dists[i] < dists[best]:
            best = i
    return AttributionResult(
        image=image_id,
        predicted=names[best],
        distances={name: float(d) for name, d in zip(names, dists)},
        distance_kind=kind.label(),
        truth=truth,
        panel_complete=panel_complete,
    )


def _attribute_one(
    manifest: Manifest, store: FeatureStore, kind: DistanceKind, original
) -> AttributionResult | tuple[str, str]:
    if original.id not in store:
        return (original.id, "missing original feature")
    panel_ids = resyntheses_of(manifest, original.id)
    features: dict[str, np.ndarray] = {}
    complete = True
    for source, rid in panel_ids.items():
        if rid in store:
            features[source] = store.get(rid)
        else:
            complete = False  # reduced panel: source dropped, run continues
    if not features:
        return (original.id, "no resynthesis features available")
    return attribute(
        store.get(original.id),
        features,
        kind,
        image_id=original.id,
        truth=original.source,
        panel_complete=complete,
    )


def attribute_dataset(
    manifest: Manifest,
    store: FeatureStore,
    kind: DistanceKind,
    targets: str = "test",
    jobs: int = 1,
) -> AttributionRun:
    """Attribute every original of the selected split.

    ``targets`` is a split label or "all". Missing features become per-image
    error entries; the run continues and reports its coverage. Results come
    back in ascending (character, source) order regardless of ``jobs``.
    """
    originals = manifest.originals()
    if targets != "all":
        originals = [o for o in originals if manifest.split.get(o.character) == targets]
    if jobs > 1 and len(originals) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(
                pool.map(lambda o: _attribute_one(manifest, store, kind, o), originals)
            )
    else:
        outcomes = [_attribute_one(manifest, store, kind, o) for o in originals]
    results = tuple(o for o in outcomes if isinstance(o, AttributionResult))
    errors = tuple(o for o in outcomes if not isinstance(o, AttributionResult))
    coverage = len(results) / len(originals) if originals else 1.0
    return AttributionRun(results=results, errors=errors, coverage=coverage)


def export_results(results, path) -> None:
    """Write results as newline-delimited records for downstream analysis."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(
                json.dumps(
                    {
                        "image": r.image,
                        "predicted": r.predicted,
                        "truth": r.truth,
                        "distances": r.distances,
                        "distance_kind": r.distance_kind,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
