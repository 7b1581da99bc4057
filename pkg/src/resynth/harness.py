"""Evaluation harness: few-shot, plain, and robust attribution tasks.

The episodic few-shot protocol samples k training resyntheses per source
from k designated characters and tests on the remaining characters. The
training-free resynthesis method ignores episode training data entirely and
is evaluated on the full original pool, so its per-repetition accuracy is
constant across shot counts. Accuracy tables are shaped one method per row,
one condition per column.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .attribution import attribute
from .baselines import (
    FEWSHOT_HIDDEN,
    MlpConfig,
    predict_mlp,
    train_centroid,
    train_mlp,
    predict_centroid,
)
from .featurestore import FeatureStore
from .manifest import Manifest, resyntheses_of
from .metrics import DistanceKind

DEFAULT_SHOT_GRID = (1, 2, 3, 5, 7, 10, 15, 20)
DEFAULT_CLASS_GRID = (5, 8, 10, 12, 14)
DEFAULT_REPETITION_SEEDS = (0, 1, 2, 3, 4)

# Fixed column order of the plain/robust accuracy table.
TABLE_CONDITIONS = (
    "Plain",
    "Blur",
    "Brightness",
    "Contrast",
    "Crop",
    "Greyscale",
    "JPEG",
    "Resize",
    "Rotation",
    "Social",
    "WEBP",
)
OPERATOR_LABELS = {
    "blur": "Blur",
    "brightness": "Brightness",
    "contrast": "Contrast",
    "crop": "Crop",
    "greyscale": "Greyscale",
    "jpeg": "JPEG",
    "resize": "Resize",
    "rotation": "Rotation",
    "social": "Social",
    "webp": "WEBP",
}


class EpisodeError(Exception):
    pass


def accuracy(predictions: Sequence[tuple[str, str]]) -> float:
    """Fraction of exact (predicted, truth) matches."""
    if not predictions:
        raise ValueError("accuracy of an empty prediction list is undefined")
    return sum(1 for p, t in predictions if p == t) / len(predictions)


@dataclass(frozen=True)
class FewShotEpisode:
    shots: int
    classes: int
    seed: int
    selected_sources: tuple[str, ...]
    train_items: tuple[tuple[str, str], ...]  # (resynthesis id, source)
    test_characters: tuple[int, ...]


def select_class_subset(manifest: Manifest, n: int) -> tuple[str, ...]:
    """Default class subsets: the first n core sources in canonical order;
    beyond the core, extension sources join in canonical order."""
    core = manifest.core_source_names
    ext = manifest.extension_source_names
    if n <= len(core):
        return tuple(core[:n])
    if n > len(core) + len(ext):
        raise EpisodeError(f"manifest has {len(core) + len(ext)} sources, need {n}")
    return tuple(sorted(core + ext[: n - len(core)]))


def make_episode(
    manifest: Manifest,
    k: int,
    n: int,
    seed: int,
    sources: Sequence[str] | None = None,
) -> FewShotEpisode:
    """Sample one few-shot episode: k shots per class from k characters."""
    selected = tuple(sorted(sources)) if sources is not None else select_class_subset(manifest, n)
    if len(selected) != n:
        raise EpisodeError(f"selected {len(selected)} sources for n={n}")
    chars = manifest.characters()
    if k >= len(chars):
        raise EpisodeError(f"k={k} leaves no test characters out of {len(chars)}")
    rng = random.Random(seed)
    train_chars = set(rng.sample(chars, k))
    pools: dict[str, list[str]] = {s: [] for s in selected}
    for img in manifest.resyntheses():
        if img.character in train_chars and img.source in pools:
            pools[img.source].append(img.id)
    train_items: list[tuple[str, str]] = []
    for source in selected:
        pool = sorted(pools[source])
        if len(pool) < k:
            raise EpisodeError(
                f"source {source!r} has only {len(pool)} resyntheses in the "
                f"{k} training characters, need {k}"
            )
        train_items.extend((rid, source) for rid in rng.sample(pool, k))
    return FewShotEpisode(
        shots=k,
        classes=n,
        seed=seed,
        selected_sources=selected,
        train_items=tuple(train_items),
        test_characters=tuple(c for c in chars if c not in train_chars),
    )


# -- attribution methods ---------------------------------------------------


class Method(Protocol):
    name: str
    trains: bool

    def fit(self, train, val, classes: Sequence[str], seed: int) -> None: ...

    def predict(self, feature: np.ndarray, panel: dict[str, np.ndarray]) -> str: ...


class ResynthesisMethod:
    """Training-free: nearest resynthesis in feature space wins."""

    trains = False

    def __init__(self, kind: DistanceKind):
        self.kind = kind
        self.name = "resynthesis"

    def fit(self, train, val, classes, seed) -> None:  # training-free
        pass

    def predict(self, feature, panel) -> str:
        return attribute(feature, panel, self.kind).predicted


class CentroidMethod:
    trains = True

    def __init__(self, kind: DistanceKind):
        self.kind = kind
        self.name = "centroid"
        self._centroids: dict[str, np.ndarray] = {}

    def fit(self, train, val, classes, seed) -> None:
        self._centroids = train_centroid(train)

    def predict(self, feature, panel) -> str:
        return predict_centroid(self._centroids, feature, self.kind)


class MlpMethod:
    trains = True

    def __init__(self, hidden: tuple[int, ...] = FEWSHOT_HIDDEN, batch_size: int | None = None):
        self.hidden = hidden
        self.batch_size = batch_size
        self.name = "mlp"
        self._model = None

    def fit(self, train, val, classes, seed) -> None:
        config = MlpConfig(hidden_layers=self.hidden, batch_size=self.batch_size, init_seed=seed)
        self._model = train_mlp(train, val, config, classes=classes)

    def predict(self, feature, panel) -> str:
        label, _ = predict_mlp(self._model, feature)
        return label


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class ReportCell:
    method: str
    condition: str
    values: tuple[float, ...]
    error: str | None = None

    @property
    def mean(self) -> float:
        return sum(self.values) / len(self.values) if self.values else float("nan")


@dataclass
class ExperimentReport:
    task: str
    cells: list[ReportCell] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def cell(self, method: str, condition: str) -> ReportCell:
        for c in self.cells:
            if c.method == method and c.condition == condition:
                return c
        raise KeyError((method, condition))

    def methods(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.method not in seen:
                seen.append(c.method)
        return seen

    def conditions(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.condition not in seen:
                seen.append(c.condition)
        table = [t for t in TABLE_CONDITIONS if t in seen]
        if len(table) == len(seen):
            return table  # canonical table order when all columns are known
        return seen

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metadata": self.metadata,
            "cells": [
                {
                    "method": c.method,
                    "condition": c.condition,
                    "values": list(c.values),
                    "mean": c.mean,
                    "repetitions": len(c.values),
                    "error": c.error,
                }
                for c in self.cells
            ],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path) -> None:
        conditions = self.conditions()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", *conditions])
            for method in self.methods():
                row: list[str] = [method]
                for cond in conditions:
                    try:
                        cell = self.cell(method, cond)
                        row.append("" if cell.error else f"{cell.mean:.6f}")
                    except KeyError:
                        row.append("")
                writer.writerow(row)


def load_report(path) -> ExperimentReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ExperimentReport(
        task=doc["task"],
        cells=[
            ReportCell(
                method=c["method"],
                condition=c["condition"],
                values=tuple(c["values"]),
                error=c.get("error"),
            )
            for c in doc["cells"]
        ],
        metadata=doc.get("metadata", {}),
    )


# -- task runners ------------------------------------------------------------


def _test_pool(
    manifest: Manifest,
    store: FeatureStore,
    sources: Sequence[str],
    characters: set[int] | None = None,
    feature_store: FeatureStore | None = None,
):
    """(feature, truth, panel) for each original, panels from the clean store.

    ``feature_store`` overrides where the original's own feature comes from
    (perturbed stores in the robust task); panels always come from ``store``.
    """
    wanted = set(sources)
    features = feature_store if feature_store is not None else store
    pool = []
    for original in manifest.originals():
        if original.source not in wanted:
            continue
        if characters is not None and original.character not in characters:
            continue
        if original.id not in features:
            continue
        panel_ids = resyntheses_of(manifest, original.id)
        panel = {
            src: store.get(rid)
            for src, rid in panel_ids.items()
            if src in wanted and rid in store
        }
        if not panel:
            continue
        pool.append((features.get(original.id), original.source, panel))
    return pool


def _evaluate(method, pool, jobs: int = 1) -> float:
    if jobs > 1 and len(pool) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            predicted = list(ex.map(lambda item: method.predict(item[0], item[2]), pool))
        return accuracy(list(zip(predicted, (truth for _, truth, _ in pool))))
    return accuracy([(method.predict(feat, panel), truth) for feat, truth, panel in pool])


def run_few_shot(
    manifest: Manifest,
    store: FeatureStore,
    methods: Sequence,
    shot_grid: Sequence[int] = DEFAULT_SHOT_GRID,
    class_grid: Sequence[int] = DEFAULT_CLASS_GRID,
    repetition_seeds: Sequence[int] = DEFAULT_REPETITION_SEEDS,
    jobs: int = 1,
) -> ExperimentReport:
    """Accuracy over the (shots x classes) grid, averaged over repetitions.

    All methods within one repetition receive the identical episode. Methods
    that do not train skip the episode's training items and are scored on
    the full original pool, making their score independent of k.
    """
    report = ExperimentReport(task="few-shot")
    cells: dict[tuple[str, str], list[float]] = {}
    errors: dict[tuple[str, str], str] = {}
    for n in class_grid:
        try:
            sources = select_class_subset(manifest, n)
        except EpisodeError as exc:
            for method in methods:
                for k in shot_grid:
                    errors[(method.name, f"n{n:02d}_k{k:02d}")] = str(exc)
            continue
        full_pool = _test_pool(manifest, store, sources)
        for k in shot_grid:
            condition = f"n{n:02d}_k{k:02d}"
            for seed in repetition_seeds:
                try:
                    episode = make_episode(manifest, k, n, seed, sources=sources)
                except EpisodeError as exc:
                    for method in methods:
                        errors[(method.name, condition)] = str(exc)
                    continue
                train, missing = [], []
                for rid, src in episode.train_items:
                    if rid in store:
                        train.append((store.get(rid), src))
                    else:
                        missing.append(rid)
                episode_pool = _test_pool(
                    manifest, store, sources, characters=set(episode.test_characters)
                )
                for method in methods:
                    key = (method.name, condition)
                    if not method.trains:
                        cells.setdefault(key, []).append(_evaluate(method, full_pool, jobs))
                        continue
                    if missing:
                        errors[key] = f"missing {len(missing)} training features"
                        continue
                    method.fit(train, [], classes=episode.selected_sources, seed=seed)
                    cells.setdefault(key, []).append(_evaluate(method, episode_pool, jobs))
    for method in methods:
        for n in class_grid:
            for k in shot_grid:
                condition = f"n{n:02d}_k{k:02d}"
                key = (method.name, condition)
                if key in errors:
                    report.cells.append(
                        ReportCell(method.name, condition, values=(), error=errors[key])
                    )
                elif key in cells:
                    report.cells.append(
                        ReportCell(method.name, condition, values=tuple(cells[key]))
                    )
    report.metadata = {
        "task_code": "T1",
        "shot_grid": list(shot_grid),
        "class_grid": list(class_grid),
        "repetition_seeds": list(repetition_seeds),
    }
    return report


def _training_pools(manifest: Manifest, store: FeatureStore):
    train, val = [], []
    for img in manifest.resyntheses():
        label = manifest.split.get(img.character)
        if img.id not in store:
            continue
        if label == "train":
            train.append((store.get(img.id), img.source))
        elif label == "val":
            val.append((store.get(img.id), img.source))
    return train, val


def run_plain(
    manifest: Manifest,
    store: FeatureStore,
    methods: Sequence,
    seed: int = 0,
    jobs: int = 1,
) -> ExperimentReport:
    """Plain attribution of test-split originals; trainable methods fit on
    the train-split resyntheses with the val split for early stopping."""
    report = ExperimentReport(task="plain", metadata={"task_code": "T2", "seed": seed})
    sources = manifest.source_names
    train, val = _training_pools(manifest, store)
    test_chars = {c for c, lab in manifest.split.items() if lab == "test"}
    pool = _test_pool(manifest, store, sources, characters=test_chars)
    for method in methods:
        if method.trains:
            method.fit(train, val, classes=sources, seed=seed)
        report.cells.append(
            ReportCell(method.name, "Plain", values=(_evaluate(method, pool, jobs),))
        )
    return report


def run_robust(
    manifest: Manifest,
    store: FeatureStore,
    perturbed_stores: dict[str, FeatureStore],
    methods: Sequence,
    seed: int = 0,
    jobs: int = 1,
) -> ExperimentReport:
    """Plain column plus one column per perturbation operator.

    Each operator store holds features of the perturbed test originals built
    from shared parameter draws; resynthesis panels stay clean. A missing
    operator store yields an absent column, and the run continues.
    """
    report = ExperimentReport(task="robust", metadata={"task_code": "T3", "seed": seed})
    sources = manifest.source_names
    train, val = _training_pools(manifest, store)
    test_chars = {c for c, lab in manifest.split.items() if lab == "test"}
    pools = {"Plain": _test_pool(manifest, store, sources, characters=test_chars)}
    absent = []
    for op, label in OPERATOR_LABELS.items():
        if op in perturbed_stores:
            pools[label] = _test_pool(
                manifest,
                store,
                sources,
                characters=test_chars,
                feature_store=perturbed_stores[op],
            )
        else:
            absent.append(label)
    for method in methods:
        if method.trains:
            method.fit(train, val, classes=sources, seed=seed)
        for label in TABLE_CONDITIONS:
            if label in pools:
                report.cells.append(
                    ReportCell(method.name, label, values=(_evaluate(method, pools[label], jobs),))
                )
    report.metadata["absent_conditions"] = absent
    return report
