"""Exact reverse nearest neighbor queries over static point sets."""

from .errors import DuplicatePoints, InvalidInput, SpreadTooLarge
from .geometry import PointSet, QtBox, Transform, normalize
from .rnn_index import IndexStats, RnnIndex, boxes_for_ball, build

__version__ = "0.1.0"

__all__ = [
    "DuplicatePoints",
    "IndexStats",
    "InvalidInput",
    "PointSet",
    "QtBox",
    "RnnIndex",
    "SpreadTooLarge",
    "Transform",
    "boxes_for_ball",
    "build",
    "normalize",
    "__version__",
]
