"""ddrf-exporter: dump pretrained-network activations as DDRF feature files."""

__version__ = "0.1.0"

from .export import ExportError, ExportJob, export_features, resolve_layer, write_ddrf
