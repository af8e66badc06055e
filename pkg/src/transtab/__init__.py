"""Transferability metrics, evaluation measures and setup-stability analysis."""

from transtab.errors import (
    DataError,
    DegenerateMeasureError,
    FormatError,
    ManifestError,
    MetricError,
    TranstabError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateMeasureError",
    "FormatError",
    "ManifestError",
    "MetricError",
    "TranstabError",
    "ValidationError",
]
