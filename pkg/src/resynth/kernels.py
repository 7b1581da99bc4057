"""Kernel backend selection.

Prefers the compiled extension, falls back to the numpy implementation when
the extension is missing. Set ``RESYNTH_PURE_KERNELS=1`` to force the
fallback (used by the benchmark and for debugging).
"""

from __future__ import annotations

import os

from . import _distkernels_py

if os.environ.get("RESYNTH_PURE_KERNELS"):
    impl = _distkernels_py
else:
    try:
        from . import _distkernels as impl  # type: ignore[no-redef]
    except ImportError:
        impl = _distkernels_py

IMPLEMENTATION: str = impl.IMPLEMENTATION

euclidean_pair = impl.euclidean_pair
manhattan_pair = impl.manhattan_pair
cosine_pair = impl.cosine_pair
mahalanobis_diag_pair = impl.mahalanobis_diag_pair
mahalanobis_full_pair = impl.mahalanobis_full_pair
euclidean_panel = impl.euclidean_panel
manhattan_panel = impl.manhattan_panel
cosine_panel = impl.cosine_panel
mahalanobis_diag_panel = impl.mahalanobis_diag_panel
mahalanobis_full_panel = impl.mahalanobis_full_panel
