from __future__ import annotations

import numpy as np
import pytest

from resynth.manifest import CORE_SOURCE_NAMES, EXTENSION_SOURCE_NAMES, split_subset
from resynth.simulator import SimulatorConfig, build_extension_inputs, build_structure


@pytest.fixture(scope="session")
def paper_core_manifest():
    """Structure-only manifest with the benchmark's core shape:
    100 characters x 10 sources, split 80/10/10."""
    config = SimulatorConfig(
        dim=16, characters=100, source_names=CORE_SOURCE_NAMES, split_counts=(80, 10, 10)
    )
    return build_structure(config)


@pytest.fixture(scope="session")
def paper_extended_manifest(paper_core_manifest):
    """Extended test manifest: the test split plus 4 extension sources."""
    from resynth.manifest import merge_extension

    test_manifest = split_subset(paper_core_manifest, "test")
    images, prompts, sources = build_extension_inputs(test_manifest, EXTENSION_SOURCE_NAMES)
    return merge_extension(test_manifest, images, sources, extension_prompts=prompts)


@pytest.fixture(scope="session")
def natural_image():
    """A deterministic 128x128 RGB fixture with smooth structure and texture,
    enough detail for codec-degradation comparisons."""
    rng = np.random.default_rng(7)
    yy, xx = np.mgrid[0:128, 0:128].astype(np.float64)
    r = 96 + 64 * np.sin(xx / 9.0) + 16 * np.cos(yy / 5.0)
    g = 80 + 72 * np.cos((xx + yy) / 13.0)
    b = 112 + 48 * np.sin(yy / 7.0) * np.cos(xx / 11.0)
    img = np.stack([r, g, b], axis=2) + rng.normal(0, 12.0, size=(128, 128, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
