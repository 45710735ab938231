"""Feature exporter: frozen self-supervised ViT patch tokens to disk.

Runs a pretrained backbone inference-only over an image directory and
writes the portable feature-store format (NPY float32 features plus a
JSON manifest) that downstream probing and clustering consume.
"""

__version__ = "0.1.0"

from .backbones import Backbone, list_backbones, load_backbone
from .errors import BackboneLoadError, ExportError, UnreadableImageWarning, UsageError
from .export import ExportSpec, export_features, list_images
from .verify import verify_store

__all__ = [
    "Backbone", "BackboneLoadError", "ExportError", "ExportSpec",
    "UnreadableImageWarning", "UsageError", "export_features", "list_backbones",
    "list_images", "load_backbone", "verify_store",
]
