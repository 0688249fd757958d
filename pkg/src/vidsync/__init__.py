"""Pixel-only time synchronization of stereo video sequences.

Two-stage pipeline: a frame-matching model fills a 20x20 matching matrix
for a pair of 20-frame sequences, then a delay estimator (diagonal vote or
a small dense classifier) turns the matrix into a signed frame delay.
"""

from .errors import ConfigError, DataError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "__version__"]
