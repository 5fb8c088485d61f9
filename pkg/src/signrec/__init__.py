"""Isolated sign recognition from RGB-D video.

Pipeline: skin/motion/depth hand segmentation with Kalman tracking, multi
descriptor feature extraction, an optional signer-independent linear
feature transform fitted on aligned sequences, and one left-to-right HMM
per sign for classification.
"""

from .config import Config

__version__ = "0.1.0"

__all__ = ["Config", "__version__"]
