"""Multi-channel object detection with late score fusion.

Selective-search proposals are described by three feature channels (an
ingested embedding, oriented-gradient templates, and Fisher vectors), scored
by per-category SVM banks, fused by a stacked classifier, refined by
per-category box regression, and gated by a whole-image presence prior.
"""

from .core import Box, Detection, GroundTruth, iou, nms

__version__ = "0.1.0"

__all__ = ["Box", "Detection", "GroundTruth", "iou", "nms", "__version__"]
