"""HTTP sidecar: image embeddings and captions over a small JSON protocol."""

__version__ = "0.1.0"

from .app import create_app
from .config import SidecarConfig

__all__ = ["SidecarConfig", "create_app", "__version__"]
