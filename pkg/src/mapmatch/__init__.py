"""Offline GPS map matching toolkit.

Road networks, synthetic trajectory generation, a transformer matcher with
transfer-learning fine-tuning, an HMM/Viterbi baseline, and sequence metrics
at point and segment level.
"""

from .routes import PointRoute, SegmentRoute, collapse

__version__ = "0.1.0"

__all__ = ["PointRoute", "SegmentRoute", "collapse", "__version__"]
