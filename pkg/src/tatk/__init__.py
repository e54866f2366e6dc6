"""Time-series attribution toolkit built on a small reverse-mode autodiff core."""

from . import attribution, autodiff, datasets, metrics, models

__version__ = "0.1.0"

__all__ = ["attribution", "autodiff", "datasets", "metrics", "models", "__version__"]
