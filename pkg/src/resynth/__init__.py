"""Training-free synthetic-image source attribution via resynthesis."""

__version__ = "0.1.0"

from .attribution import AttributionResult, attribute, attribute_dataset
from .featurestore import FeatureStore, embed_batch, load_store, save_store
from .manifest import (
    ImageRecord,
    Manifest,
    PromptRecord,
    SourceId,
    build_split,
    load_manifest,
    merge_extension,
    resyntheses_of,
    save_manifest,
    validate_manifest,
)
from .metrics import COSINE, EUCLIDEAN, MANHATTAN, DistanceKind, distance, estimate_precision
from .simulator import SimulatorConfig, generate_synthetic_dataset

__all__ = [
    "AttributionResult",
    "COSINE",
    "DistanceKind",
    "EUCLIDEAN",
    "FeatureStore",
    "ImageRecord",
    "MANHATTAN",
    "Manifest",
    "PromptRecord",
    "SimulatorConfig",
    "SourceId",
    "attribute",
    "attribute_dataset",
    "build_split",
    "distance",
    "embed_batch",
    "estimate_precision",
    "generate_synthetic_dataset",
    "load_manifest",
    "load_store",
    "merge_extension",
    "resyntheses_of",
    "save_manifest",
    "save_store",
    "validate_manifest",
    "__version__",
]
