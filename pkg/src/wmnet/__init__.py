"""Blind, robust image watermarking with learned embedder/extractor networks."""

from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .errors import WatermarkError

__version__ = "0.1.0"

__all__ = ["ModelCheckpoint", "WatermarkError", "load_checkpoint", "save_checkpoint", "__version__"]
