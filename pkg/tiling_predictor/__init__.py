"""
tiling-predictor: action-conditioned next-frame prediction for driving video.
"""

__version__ = "0.1.0"
