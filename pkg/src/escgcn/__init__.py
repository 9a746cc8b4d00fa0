"""Relation extraction with entity-aware self-attention and graph convolution."""

from .config import ModelConfig
from .errors import DataError, EscGcnError, NumericalError, UsageError

__all__ = ["ModelConfig", "EscGcnError", "UsageError", "DataError", "NumericalError"]
__version__ = "0.1.0"
