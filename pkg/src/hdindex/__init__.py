"""Approximate k-nearest-neighbour search over high-dimensional vectors.

Points are split into contiguous dimension groups; each group is mapped onto
a Hilbert curve and indexed by a disk-paged B+-tree whose leaves carry the
distances to a handful of reference objects. Queries gather key-space
neighbours from every tree, prune them with triangular and Ptolemaic lower
bounds, and re-rank the survivors exactly.
"""

from .builder import HDIndex, IndexConfig, build, load, partition_dimensions
from .core import Dataset, QueryParams, ResultSet, VectorRecord, euclidean
from .evaluation import average_precision, approximation_ratio, exact_knn, mean_average_precision
from .query import knn, ptolemaic_lb, triangular_lb

__version__ = "0.1.0"

__all__ = [
    "Dataset", "HDIndex", "IndexConfig", "QueryParams", "ResultSet", "VectorRecord",
    "approximation_ratio", "average_precision", "build", "euclidean", "exact_knn", "knn",
    "load", "mean_average_precision", "partition_dimensions", "ptolemaic_lb", "triangular_lb",
]
