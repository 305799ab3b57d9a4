"""Event/image segmentation with selective state-space scans, from scratch:
a minimal autodiff tensor core, S6 scans (sequential + associative parallel),
2D directional scanning, dual-dimensional fusion, and a toy dual-branch
segmentation model with its verification harness."""

from .tensor import GradTape, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "GradTape", "__version__"]
