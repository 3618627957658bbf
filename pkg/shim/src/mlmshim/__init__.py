"""HTTP inference shim serving a masked language model."""

__version__ = "0.1.0"

from .server import ShimConfig, create_app, serve  # noqa: F401
