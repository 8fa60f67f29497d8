"""Image-level ranking from per-descriptor kANN answers by Borda count.

Each descriptor of a query image yields a ranked answer list; an answer in
slot ``l`` (1-based) awards ``k + 1 - l`` points to the image that owns it.
"""

from __future__ import annotations

import os
from collections import Counter
from typing import Iterable, Mapping

import numpy as np

from .core import FormatError, HDIndexError


def _ids(result) -> list[int]:
    return [int(getattr(e, "id", e)) for e in result]


def accumulate(table: Counter, result, owners: Mapping[int, int], k: int) -> Counter:
    """Add one answer list's points into ``table`` in place."""
    for slot, obj in enumerate(_ids(result)[:k], start=1):
        try:
            image = owners[obj]
        except KeyError:
            raise HDIndexError(f"descriptor {obj} has no owning image") from None
        table[image] += k + 1 - slot
    return table


def borda_scores(results: Iterable, owners: Mapping[int, int], k: int) -> Counter:
    table = Counter()
    for result in results:
        accumulate(table, result, owners, k)
    return table


def top_images(table: Mapping[int, int], k: int) -> list[int]:
    """The ``k`` best-scoring images, ties to the smaller image id."""
    return [img for img, _ in sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def read_owners(path, binary: bool | None = None) -> dict[int, int]:
    """Load a descriptor -> image map.

    Text files hold two whitespace- or comma-separated integer columns;
    binary files (``.bin``) hold little-endian ``int64`` pairs.
    """
    path = os.fspath(path)
    if binary is None:
        binary = path.endswith(".bin")
    if binary:
        raw = np.fromfile(path, dtype="<i8")
        if raw.size % 2:
            raise FormatError(f"{path}: odd number of int64 values")
        pairs = raw.reshape(-1, 2)
    else:
        with open(path) as fh:
            text = fh.read().replace(",", " ")
        try:
            pairs = np.array(text.split(), dtype=np.int64).reshape(-1, 2)
        except ValueError as exc:
            raise FormatError(f"{path}: expected two integer columns") from exc
    return dict(zip(pairs[:, 0].tolist(), pairs[:, 1].tolist()))
