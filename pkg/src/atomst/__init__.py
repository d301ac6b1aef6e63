"""Atomic-file storage, validation and benchmark evaluation for urban spatial-temporal data."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import AtomstError  # noqa: E402
from .model import DatasetBundle, DynamicsTensor, FileKind, Table  # noqa: E402

__all__ = ["AtomstError", "DatasetBundle", "DynamicsTensor", "FileKind", "Table", "__version__"]
