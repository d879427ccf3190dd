"""One-shot converter from BSCCM-tiny into the neutral dataset format."""

from .exporter import (
    CHANNELS,
    CLASS_CODES,
    BsccmTinySource,
    ExportError,
    ExportManifest,
    export,
)
from .neutral import read_image, write_image

__all__ = [
    "CHANNELS",
    "CLASS_CODES",
    "BsccmTinySource",
    "ExportError",
    "ExportManifest",
    "export",
    "read_image",
    "write_image",
]

__version__ = "0.1.0"
