from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image

from resynth.cli import main
from resynth.manifest import load_manifest, save_manifest


@pytest.fixture()
def sim_paths(tmp_path):
    manifest = tmp_path / "sim.ndjson"
    store = tmp_path / "sim.rfsa"
    rc = main(
        [
            "simulate",
            "--out-manifest", str(manifest),
            "--out-store", str(store),
            "--characters", "12",
            "--sources", "alpha", "beta", "gamma", "delta",
            "--dim", "16",
            "--split", "8", "2", "2",
            "--seed", "3",
        ]
    )
    assert rc == 0
    return manifest, store


class TestValidate:
    def test_valid_manifest_exit_0(self, sim_paths, capsys):
        manifest, _ = sim_paths
        assert main(["validate", str(manifest)]) == 0
        out = capsys.readouterr().out
        assert '"originals": 48' in out

    def test_orphaned_resynthesis_exit_1(self, sim_paths, tmp_path, capsys):
        manifest_path, _ = sim_paths
        m = load_manifest(manifest_path)
        victim = m.resyntheses()[0]
        from resynth.manifest import Manifest

        mutated = Manifest(
            sources=m.sources,
            images=tuple(i for i in m.images if i.id != victim.id),
            prompts=m.prompts,
            split=dict(m.split),
        )
        bad_path = tmp_path / "bad.ndjson"
        save_manifest(mutated, bad_path)
        assert main(["validate", str(bad_path)]) == 1
        assert "missing_resynthesis" in capsys.readouterr().out

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["validate", str(tmp_path / "absent.ndjson")]) == 2


class TestSimulateAttribute:
    def test_strong_fingerprints_accuracy_one(self, tmp_path, capsys):
        manifest = tmp_path / "m.ndjson"
        store = tmp_path / "s.rfsa"
        assert (
            main(
                [
                    "simulate",
                    "--out-manifest", str(manifest),
                    "--out-store", str(store),
                    "--characters", "10",
                    "--sources", "a", "b", "c", "d", "e",
                    "--dim", "16",
                    "--alpha", "3.0",
                    "--sigma", "0.05",
                    "--beta", "0.0",
                    "--split", "8", "1", "1",
                ]
            )
            == 0
        )
        capsys.readouterr()
        rc = main(["attribute", "--manifest", str(manifest), "--store", str(store), "--targets", "all"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "accuracy 1.0000" in out

    def test_results_export(self, sim_paths, tmp_path, capsys):
        manifest, store = sim_paths
        out = tmp_path / "results.ndjson"
        rc = main(
            [
                "attribute",
                "--manifest", str(manifest),
                "--store", str(store),
                "--targets", "all",
                "--out", str(out),
            ]
        )
        assert rc == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 48

    def test_simulate_from_config_file(self, tmp_path):
        from resynth.simulator import SimulatorConfig, load_config

        config = SimulatorConfig(
            dim=16, characters=6, source_names=("a", "b", "c"), seed=5, split_counts=(4, 1, 1)
        )
        path = tmp_path / "sim.json"
        path.write_text(json.dumps(config.to_dict()))
        assert load_config(path) == config
        manifest = tmp_path / "m.ndjson"
        store = tmp_path / "s.rfsa"
        rc = main(
            [
                "simulate",
                "--config", str(path),
                "--out-manifest", str(manifest),
                "--out-store", str(store),
            ]
        )
        assert rc == 0
        assert len(load_manifest(manifest).originals()) == 18

    def test_centroid_labeled_in_report(self, sim_paths, tmp_path):
        manifest, store = sim_paths
        d = tmp_path / "run"
        main(
            [
                "task", "plain",
                "--manifest", str(manifest),
                "--store", str(store),
                "--out-dir", str(d),
                "--methods", "resynthesis,centroid",
            ]
        )
        doc = json.loads((d / "report.json").read_text())
        assert "centroid" in doc["metadata"]["method_notes"]

    def test_mahalanobis_distance_flag(self, sim_paths, capsys):
        manifest, store = sim_paths
        rc = main(
            [
                "attribute",
                "--manifest", str(manifest),
                "--store", str(store),
                "--targets", "all",
                "--distance", "mahalanobis",
                "--precision-mode", "diagonal",
            ]
        )
        assert rc == 0


class TestTask:
    def test_plain_byte_identical_reruns(self, sim_paths, tmp_path):
        manifest, store = sim_paths
        dirs = [tmp_path / "run1", tmp_path / "run2"]
        for d in dirs:
            rc = main(
                [
                    "task", "plain",
                    "--manifest", str(manifest),
                    "--store", str(store),
                    "--out-dir", str(d),
                    "--methods", "resynthesis,centroid,mlp",
                ]
            )
            assert rc == 0
        for name in ("report.csv", "report.json", "config.json"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_jobs_do_not_change_reports(self, sim_paths, tmp_path):
        manifest, store = sim_paths
        outputs = []
        for jobs in ("1", "4"):
            d = tmp_path / f"jobs{jobs}"
            rc = main(
                [
                    "task", "few-shot",
                    "--manifest", str(manifest),
                    "--store", str(store),
                    "--out-dir", str(d),
                    "--methods", "resynthesis,centroid",
                    "--shots", "1", "2",
                    "--classes", "3",
                    "--reps", "0", "1",
                    "--jobs", jobs,
                ]
            )
            assert rc == 0
            outputs.append((d / "report.json").read_text())
        doc0, doc1 = (json.loads(o) for o in outputs)
        assert doc0["cells"] == doc1["cells"]

    def test_robust_columns(self, sim_paths, tmp_path):
        manifest, store = sim_paths
        d = tmp_path / "robust"
        rc = main(
            [
                "task", "robust",
                "--manifest", str(manifest),
                "--store", str(store),
                "--out-dir", str(d),
                "--methods", "resynthesis",
                "--perturbed",
                *[f"{op}={store}" for op in (
                    "blur", "brightness", "contrast", "crop", "greyscale",
                    "jpeg", "resize", "rotation", "social", "webp",
                )],
            ]
        )
        assert rc == 0
        header = (d / "report.csv").read_text().splitlines()[0]
        assert header == (
            "method,Plain,Blur,Brightness,Contrast,Crop,Greyscale,JPEG,Resize,"
            "Rotation,Social,WEBP"
        )

    def test_config_records_inputs(self, sim_paths, tmp_path):
        manifest, store = sim_paths
        d = tmp_path / "run"
        main(
            [
                "task", "plain",
                "--manifest", str(manifest),
                "--store", str(store),
                "--out-dir", str(d),
                "--methods", "resynthesis",
            ]
        )
        config = json.loads((d / "config.json").read_text())
        assert set(config["input_digests"]) == {"manifest", "store"}
        assert config["version"]
        assert config["distance"] == "euclidean"


class TestEmbed:
    def test_hash_backend_covers_manifest(self, sim_paths, tmp_path, capsys):
        manifest, _ = sim_paths
        out = tmp_path / "hash.rfsa"
        rc = main(
            ["embed", "--manifest", str(manifest), "--out", str(out), "--dim", "24"]
        )
        assert rc == 0
        from resynth.featurestore import load_store

        store = load_store(out)
        assert store.dim == 24
        assert len(store) == 48 + 4 * 48  # originals + resyntheses


class TestPerturbCommand:
    def test_emits_corpus(self, tmp_path, natural_image, capsys):
        from resynth.manifest import ImageRecord, Manifest, PromptRecord, SourceId

        img_dir = tmp_path / "pixels"
        img_dir.mkdir()
        path = img_dir / "or-1.png"
        Image.fromarray(natural_image).save(path)
        manifest = Manifest(
            sources=(SourceId("a"),),
            images=(
                ImageRecord(
                    id="or-1", kind="original", source="a", character=0,
                    prompt="pp-0", content_ref=str(path),
                ),
            ),
            prompts=(PromptRecord(id="pp-0", kind="primary", text="t", character=0),),
            split={0: "test"},
        )
        mpath = tmp_path / "m.ndjson"
        save_manifest(manifest, mpath)
        out = tmp_path / "corpus"
        rc = main(
            [
                "perturb",
                "--manifest", str(mpath),
                "--out", str(out),
                "--operators", "jpeg", "crop",
                "--seed", "5",
            ]
        )
        assert rc == 0
        assert (out / "jpeg" / "or-1.jpg").exists()
        assert (out / "draws.ndjson").exists()


class TestReportCommand:
    def test_renders_table(self, sim_paths, tmp_path, capsys):
        manifest, store = sim_paths
        d = tmp_path / "run"
        main(
            [
                "task", "plain",
                "--manifest", str(manifest),
                "--store", str(store),
                "--out-dir", str(d),
                "--methods", "resynthesis,centroid",
            ]
        )
        capsys.readouterr()
        csv_out = tmp_path / "rendered.csv"
        rc = main(["report", str(d / "report.json"), "--csv", str(csv_out)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "resynthesis" in out and "Plain" in out
        assert csv_out.exists()


def test_module_entry_point(sim_paths):
    import subprocess
    import sys

    manifest, _ = sim_paths
    proc = subprocess.run(
        [sys.executable, "-m", "resynth", "validate", str(manifest)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
