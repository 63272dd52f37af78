"""Point cloud completion with geometry-aware transformers, in numpy."""

__version__ = "0.1.0"
