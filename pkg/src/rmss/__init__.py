"""Motion-aware contrastive pretraining for radar moving object segmentation.

Synthetic radar scans, Doppler-profile pseudo-labels (DPR), density
clustering, a small numpy point encoder, and the pretrain / fine-tune /
evaluate loops around them.
"""

from .core import MOVING, STATIC, UNLABELED, ClusterLabels, RadarPoint, RadarScan

__version__ = "0.1.0"

__all__ = ["MOVING", "STATIC", "UNLABELED", "ClusterLabels", "RadarPoint", "RadarScan"]
