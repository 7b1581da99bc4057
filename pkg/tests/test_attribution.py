from __future__ import annotations

import math

import numpy as np
import pytest

from resynth.attribution import attribute, attribute_dataset, export_results
from resynth.manifest import CORE_SOURCE_NAMES
from resynth.metrics import COSINE, EUCLIDEAN, MANHATTAN, PrecisionMatrix, distance, mahalanobis
from resynth.simulator import SimulatorConfig, generate_synthetic_dataset


def naive_scan(original, panel, kind):
    """Independent oracle: per-pair distance plus a first-minimum scan over
    lexicographic source order."""
    best_name, best_d = None, math.inf
    for name in sorted(panel):
        d = distance(kind, original, panel[name])
        if d < best_d:
            best_name, best_d = name, d
    return best_name


class TestAttribute:
    def test_exact_match_panel(self):
        rng = np.random.default_rng(0)
        panel = {f"s{i}": rng.standard_normal(8) for i in range(10)}
        query = panel["s4"].copy()
        result = attribute(query, panel, EUCLIDEAN)
        assert result.predicted == "s4"
        assert result.distances["s4"] == 0.0
        assert len(result.distances) == 10

    def test_fingerprinted_panel_recovers_source(self):
        # One source's panel row carries the query's fingerprint; the
        # training-free rule must pick exactly that source.
        config = SimulatorConfig(
            dim=32, characters=3, source_names=CORE_SOURCE_NAMES,
            noise=0.05, caption_drift=0.1, split_counts=(1, 1, 1),
        )
        manifest, store = generate_synthetic_dataset(config)
        for original in manifest.originals():
            if original.source != "freepik":
                continue
            from resynth.manifest import resyntheses_of

            panel = {
                src: store.get(rid)
                for src, rid in resyntheses_of(manifest, original.id).items()
            }
            result = attribute(store.get(original.id), panel, EUCLIDEAN, image_id=original.id)
            assert result.predicted == "freepik"

    def test_tie_breaks_lexicographically(self):
        # Two panel entries exactly equidistant from the query.
        query = np.zeros(2)
        panel = {"zeta": np.array([1.0, 0.0]), "alpha": np.array([-1.0, 0.0])}
        result = attribute(query, panel, EUCLIDEAN)
        assert result.distances["alpha"] == result.distances["zeta"]
        assert result.predicted == "alpha"

    def test_empty_panel_rejected(self):
        with pytest.raises(ValueError):
            attribute(np.zeros(2), {}, EUCLIDEAN)

    def test_argmin_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            panel = {f"s{i:02d}": rng.standard_normal(12) for i in range(8)}
            result = attribute(rng.standard_normal(12), panel, EUCLIDEAN)
            for transform in (lambda d: d**2, lambda d: 3.0 * d + 1.0, math.expm1):
                transformed = {k: transform(v) for k, v in result.distances.items()}
                assert min(sorted(transformed), key=transformed.__getitem__) == result.predicted

    def test_panel_insertion_order_irrelevant(self):
        rng = np.random.default_rng(2)
        vecs = {f"s{i:02d}": rng.standard_normal(6) for i in range(10)}
        query = rng.standard_normal(6)
        forward = attribute(query, dict(sorted(vecs.items())), EUCLIDEAN)
        backward = attribute(query, dict(sorted(vecs.items(), reverse=True)), EUCLIDEAN)
        assert forward.predicted == backward.predicted
        assert forward.distances == backward.distances

    def test_oracle_agreement_sample(self):
        rng = np.random.default_rng(3)
        kinds = [EUCLIDEAN, MANHATTAN, COSINE]
        for trial in range(500):
            dim = int(rng.integers(2, 32))
            m = int(rng.integers(2, 15))
            panel = {f"s{i:02d}": rng.standard_normal(dim) for i in range(m)}
            query = rng.standard_normal(dim)
            kind = kinds[trial % 3]
            assert attribute(query, panel, kind).predicted == naive_scan(query, panel, kind)

    def test_mahalanobis_panel(self):
        rng = np.random.default_rng(4)
        dim = 16
        kind = mahalanobis(PrecisionMatrix(dim, "diagonal", np.abs(rng.standard_normal(dim)) + 0.5))
        panel = {f"s{i}": rng.standard_normal(dim) for i in range(5)}
        query = rng.standard_normal(dim)
        assert attribute(query, panel, kind).predicted == naive_scan(query, panel, kind)


@pytest.fixture(scope="module")
def extended_sim():
    config = SimulatorConfig(
        dim=32,
        characters=10,
        source_names=CORE_SOURCE_NAMES,
        extension_source_names=("auraflow", "hunyuan", "pixart", "playground"),
        split_counts=(0, 0, 10),
        noise=0.05,
    )
    return generate_synthetic_dataset(config)


class TestAttributeDataset:

    def test_extended_shape(self, extended_sim):
        manifest, store = extended_sim
        run = attribute_dataset(manifest, store, EUCLIDEAN, targets="test")
        assert len(run.results) == 140
        assert all(len(r.distances) == 14 for r in run.results)
        assert run.coverage == 1.0

    def test_iteration_order(self, extended_sim):
        manifest, store = extended_sim
        run = attribute_dataset(manifest, store, EUCLIDEAN, targets="test")
        keys = [(manifest.image(r.image).character, manifest.image(r.image).source) for r in run.results]
        assert keys == sorted(keys)

    def test_jobs_do_not_change_results(self, extended_sim):
        manifest, store = extended_sim
        serial = attribute_dataset(manifest, store, EUCLIDEAN, targets="test", jobs=1)
        threaded = attribute_dataset(manifest, store, EUCLIDEAN, targets="test", jobs=4)
        assert serial == threaded

    def test_single_source_degenerate(self):
        config = SimulatorConfig(dim=4, characters=4, source_names=("only",), split_counts=(2, 1, 1))
        manifest, store = generate_synthetic_dataset(config)
        run = attribute_dataset(manifest, store, EUCLIDEAN, targets="all")
        assert all(r.predicted == "only" for r in run.results)
        assert all(r.predicted == r.truth for r in run.results)

    def test_missing_feature_reduces_panel(self, extended_sim):
        manifest, store = extended_sim
        from resynth.featurestore import FeatureStore
        from resynth.manifest import resyntheses_of

        victim = manifest.originals()[0]
        dropped = resyntheses_of(manifest, victim.id)["bing"]
        partial = FeatureStore(dim=store.dim)
        for image_id, vec in store.items():
            if image_id != dropped:
                partial.put(image_id, vec)
        run = attribute_dataset(manifest, partial, EUCLIDEAN, targets="test")
        result = next(r for r in run.results if r.image == victim.id)
        assert len(result.distances) == 13
        assert not result.panel_complete
        assert run.coverage == 1.0

    def test_missing_original_is_error_entry(self, extended_sim):
        manifest, store = extended_sim
        from resynth.featurestore import FeatureStore

        victim = manifest.originals()[3]
        partial = FeatureStore(dim=store.dim)
        for image_id, vec in store.items():
            if image_id != victim.id:
                partial.put(image_id, vec)
        run = attribute_dataset(manifest, partial, EUCLIDEAN, targets="test")
        assert len(run.results) == 139
        assert any(image_id == victim.id for image_id, _ in run.errors)
        assert run.coverage == pytest.approx(139 / 140)

    def test_export_round_trip(self, extended_sim, tmp_path):
        import json

        manifest, store = extended_sim
        run = attribute_dataset(manifest, store, EUCLIDEAN, targets="test")
        path = tmp_path / "results.ndjson"
        export_results(run.results, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 140
        rec = json.loads(lines[0])
        assert set(rec) == {"image", "predicted", "truth", "distances", "distance_kind"}
