"""Batch command-line frontend.

Subcommands compose the library into reproducible experiment runs: dataset
validation, embedding, simulation, perturbation corpora, single-shot
attribution, and the three evaluation tasks. All randomness enters through
explicit seed flags; reruns with identical inputs and seeds produce
byte-identical artifacts.

Exit codes: 0 success, 1 domain violation, 2 I/O or configuration fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .attribution import attribute_dataset, export_results
from .featurestore import (
    EmbeddingServiceError,
    HashEmbeddingBackend,
    HttpEmbeddingBackend,
    embed_batch,
    load_store,
    save_store,
)
from .harness import (
    DEFAULT_CLASS_GRID,
    DEFAULT_REPETITION_SEEDS,
    DEFAULT_SHOT_GRID,
    CentroidMethod,
    MlpMethod,
    ResynthesisMethod,
    load_report,
    run_few_shot,
    run_plain,
    run_robust,
)
from .manifest import (
    CORE_SOURCE_NAMES,
    ManifestError,
    load_manifest,
    save_manifest,
    validate_manifest,
)
from .metrics import COSINE, EUCLIDEAN, MANHATTAN, DistanceKind, estimate_precision, mahalanobis
from .perturb import OPERATORS, emit_corpus
from .simulator import SimulatorConfig, generate_synthetic_dataset
from .simulator import load_config as load_sim_config

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_CONFIG = 2


class CliConfigError(Exception):
    pass


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _make_distance(args, manifest, store) -> DistanceKind:
    name = args.distance
    if name == "euclidean":
        return EUCLIDEAN
    if name == "manhattan":
        return MANHATTAN
    if name == "cosine":
        return COSINE
    if name == "mahalanobis":
        # Reference pool: resynthesis features of the evaluation split.
        targets = getattr(args, "targets", "test")
        pool = [
            store.get(img.id)
            for img in manifest.resyntheses()
            if img.id in store
            and (targets == "all" or manifest.split.get(img.character) == targets)
        ]
        if len(pool) < 2:
            raise CliConfigError("mahalanobis needs at least 2 reference resynthesis features")
        precision = estimate_precision(pool, shrinkage=args.shrinkage, mode=args.precision_mode)
        return mahalanobis(precision)
    raise CliConfigError(f"unknown distance {name!r}")


def _make_methods(names: list[str], kind: DistanceKind, task: str):
    methods = []
    for name in names:
        if name == "resynthesis":
            methods.append(ResynthesisMethod(kind))
        elif name == "centroid":
            methods.append(CentroidMethod(kind))
        elif name == "mlp":
            if task == "few-shot":
                methods.append(MlpMethod())
            else:
                methods.append(MlpMethod(hidden=(512, 32), batch_size=64))
        else:
            raise CliConfigError(f"unknown method {name!r}")
    return methods


def _resolve_content(images_root: str | None):
    def resolver(content_ref: str) -> bytes:
        if content_ref.startswith(("sim:", "mem:")):
            # Synthetic refs carry no pixels; the ref itself is the content.
            return content_ref.encode("utf-8")
        path = Path(content_ref)
        if images_root is not None and not path.is_absolute():
            path = Path(images_root) / path
        return path.read_bytes()

    return resolver


# -- subcommands --------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = validate_manifest(manifest)
    for v in report.violations:
        print(f"violation[{v.kind}]: {v.message}")
    print(json.dumps(report.counts, sort_keys=True))
    return EXIT_OK if report.valid else EXIT_DOMAIN


def cmd_embed(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.backend == "hash":
        backend = HashEmbeddingBackend(dim=args.dim)
    else:
        backend = HttpEmbeddingBackend(base_url=args.base_url, model=args.model)
        if args.dim and backend.dim != args.dim:
            print(
                f"error: sidecar serves dim {backend.dim}, configured dim is {args.dim}",
                file=sys.stderr,
            )
            return EXIT_CONFIG
    images = [(img.id, img.content_ref) for img in manifest.images]
    result = embed_batch(backend, images, resolver=_resolve_content(args.images_root))
    save_store(result.store, args.out)
    for err in result.errors:
        print(f"embed error: {err.image_id}: {err.message}", file=sys.stderr)
    print(f"embedded {len(result.store)} vectors (dim {result.store.dim}) -> {args.out}")
    return EXIT_DOMAIN if result.errors else EXIT_OK


def cmd_simulate(args) -> int:
    if args.config:
        config = load_sim_config(args.config)
    else:
        config = SimulatorConfig(
            dim=args.dim,
            source_names=tuple(args.sources),
            extension_source_names=tuple(args.extension_sources),
            characters=args.characters,
            fingerprint_strength=args.alpha,
            semantic_spread=args.spread,
            caption_drift=args.beta,
            noise=args.sigma,
            seed=args.seed,
            split_counts=tuple(args.split) if args.split else None,
        )
    manifest, store = generate_synthetic_dataset(config)
    save_manifest(manifest, args.out_manifest)
    save_store(store, args.out_store)
    print(
        f"simulated {len(manifest.originals())} originals, "
        f"{len(manifest.resyntheses())} resyntheses, dim {store.dim}"
    )
    return EXIT_OK


def cmd_perturb(args) -> int:
    import io

    import numpy as np
    from PIL import Image

    manifest = load_manifest(args.manifest)
    resolver = _resolve_content(args.images_root)
    images = []
    for img in manifest.originals():
        if args.targets != "all" and manifest.split.get(img.character) != args.targets:
            continue
        pixels = np.asarray(Image.open(io.BytesIO(resolver(img.content_ref))).convert("RGB"))
        images.append((img.id, pixels))
    emit_corpus(images, list(args.operators), args.seed, args.out)
    print(f"perturbed {len(images)} images with {len(args.operators)} operators -> {args.out}")
    return EXIT_OK


def cmd_attribute(args) -> int:
    manifest = load_manifest(args.manifest)
    store = load_store(args.store)
    kind = _make_distance(args, manifest, store)
    run = attribute_dataset(manifest, store, kind, targets=args.targets, jobs=args.jobs)
    if args.out:
        export_results(run.results, args.out)
    for image_id, message in run.errors:
        print(f"attribution error: {image_id}: {message}", file=sys.stderr)
    correct = sum(1 for r in run.results if r.predicted == r.truth)
    total = len(run.results)
    acc = correct / total if total else float("nan")
    print(f"attributed {total} originals, coverage {run.coverage:.4f}, accuracy {acc:.4f}")
    return EXIT_OK if not run.errors else EXIT_DOMAIN


def cmd_task(args) -> int:
    manifest = load_manifest(args.manifest)
    store = load_store(args.store)
    kind = _make_distance(args, manifest, store)
    methods = _make_methods(args.methods.split(","), kind, args.task)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        if args.task == "few-shot":
            report = run_few_shot(
                manifest,
                store,
                methods,
                shot_grid=tuple(args.shots),
                class_grid=tuple(args.classes),
                repetition_seeds=tuple(args.reps),
                jobs=args.jobs,
            )
        elif args.task == "plain":
            report = run_plain(manifest, store, methods, seed=args.seed, jobs=args.jobs)
        else:
            perturbed = {}
            for spec in args.perturbed:
                op, _, path = spec.partition("=")
                if not path:
                    raise CliConfigError(f"--perturbed expects op=path, got {spec!r}")
                perturbed[op] = load_store(path)
            report = run_robust(
                manifest, store, perturbed, methods, seed=args.seed, jobs=args.jobs
            )
        run_config = {
            "task": args.task,
            "manifest": args.manifest,
            "store": args.store,
            "distance": kind.label(),
            "methods": args.methods.split(","),
            "shots": list(args.shots) if args.task == "few-shot" else None,
            "classes": list(args.classes) if args.task == "few-shot" else None,
            "repetition_seeds": list(args.reps) if args.task == "few-shot" else None,
            "seed": args.seed,
            "jobs": args.jobs,
            "operators": [s.partition("=")[0] for s in args.perturbed]
            if args.task == "robust"
            else None,
            "draws_file": args.draws if args.task == "robust" else None,
            "version": __version__,
            "input_digests": {
                "manifest": _sha256_file(args.manifest),
                "store": _sha256_file(args.store),
            },
        }
        # report payloads stay invariant under execution-only knobs (--jobs);
        # the full invocation, jobs included, lives in config.json
        report.metadata["run_config"] = {k: v for k, v in run_config.items() if k != "jobs"}
        report.metadata["feature_dim"] = store.dim
        report.metadata["distance"] = kind.label()
        if "centroid" in run_config["methods"]:
            report.metadata["method_notes"] = {
                "centroid": "nearest-centroid shallow baseline, stand-in for a kernel classifier"
            }
        config_path = out_dir / "config.json"
        json_path = out_dir / "report.json"
        csv_path = out_dir / "report.csv"
        written = [config_path, json_path, csv_path]
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump(run_config, fh, indent=2, sort_keys=True)
            fh.write("\n")
        report.save_json(json_path)
        report.save_csv(csv_path)
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)  # no partial outputs
        raise
    print(f"wrote {out_dir}/config.json, report.json, report.csv")
    return EXIT_OK


def cmd_report(args) -> int:
    report = load_report(args.report)
    conditions = report.conditions()
    width = max((len(m) for m in report.methods()), default=6)
    print(f"task: {report.task}")
    print(" " * width + "  " + "  ".join(f"{c:>10}" for c in conditions))
    for method in report.methods():
        row = [f"{method:<{width}}"]
        for cond in conditions:
            try:
                cell = report.cell(method, cond)
                row.append(f"{'--':>10}" if cell.error else f"{cell.mean:>10.4f}")
            except KeyError:
                row.append(f"{'':>10}")
        print("  ".join(row))
    if args.csv:
        report.save_csv(args.csv)
        print(f"wrote {args.csv}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resynth",
        description="Training-free synthetic-image source attribution via resynthesis.",
    )
    parser.add_argument("--version", action="version", version=f"resynth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest's structural invariants")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("embed", help="embed manifest images into a feature store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("hash", "http"), default="hash")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--base-url", default="http://127.0.0.1:8871")
    p.add_argument("--model", default="")
    p.add_argument("--images-root", default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with known fingerprints")
    p.add_argument("--config", default=None, help="simulator config file (JSON); overrides the flags below")
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-store", required=True)
    p.add_argument("--characters", type=int, default=100)
    p.add_argument("--sources", nargs="+", default=list(CORE_SOURCE_NAMES))
    p.add_argument("--extension-sources", nargs="+", default=[])
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--alpha", type=float, default=1.0, help="fingerprint strength")
    p.add_argument("--beta", type=float, default=0.3, help="caption drift")
    p.add_argument("--sigma", type=float, default=0.2, help="per-image noise")
    p.add_argument("--spread", type=float, default=1.0, help="semantic spread")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", nargs=3, type=int, default=None, metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("perturb", help="emit a perturbed image corpus plus draws file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images-root", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--operators", nargs="+", default=list(OPERATORS), choices=OPERATORS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--targets", default="test", choices=("train", "val", "test", "all"))
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("attribute", help="attribute originals against their panels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument(
        "--distance",
        default="euclidean",
        choices=("euclidean", "manhattan", "cosine", "mahalanobis"),
    )
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--precision-mode", default="diagonal", choices=("diagonal", "full"))
    p.add_argument("--targets", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("task", help="run an evaluation task and write reports")
    p.add_argument("task", choices=("few-shot", "plain", "robust"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--methods", default="resynthesis,mlp,centroid")
    p.add_argument(
        "--distance",
        default="euclidean",
        choices=("euclidean", "manhattan", "cosine", "mahalanobis"),
    )
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--precision-mode", default="diagonal", choices=("diagonal", "full"))
    p.add_argument("--targets", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--shots", nargs="+", type=int, default=list(DEFAULT_SHOT_GRID))
    p.add_argument("--classes", nargs="+", type=int, default=list(DEFAULT_CLASS_GRID))
    p.add_argument("--reps", nargs="+", type=int, default=list(DEFAULT_REPETITION_SEEDS))
    p.add_argument("--perturbed", nargs="*", default=[], metavar="OP=STORE")
    p.add_argument("--draws", default=None, help="draws file behind the perturbed stores, recorded for audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_task)

    p = sub.add_parser("report", help="render a structured report")
    p.add_argument("report")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, CliConfigError, EmbeddingServiceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
