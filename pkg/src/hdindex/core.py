"""Domain types shared across the package and the Euclidean distance kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class HDIndexError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(HDIndexError, ValueError):
    pass


class ConfigurationError(HDIndexError, ValueError):
    pass


class DomainError(HDIndexError, ValueError):
    pass


class DatasetTooSmallError(HDIndexError, ValueError):
    pass


class StorageError(HDIndexError, OSError):
    pass


class FormatError(HDIndexError, ValueError):
    """A file on disk does not match the expected binary layout."""


@dataclass(frozen=True)
class VectorRecord:
    id: int
    coords: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.coords):
            raise DomainError(f"record {self.id} has non-finite coordinates")

    @property
    def dim(self) -> int:
        return len(self.coords)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of ``n`` points of dimensionality ``dim``.

    ``coords`` is an ``(n, dim)`` float64 array and ``ids`` the matching
    object identifiers. ``domain`` is the ``(lo, hi)`` value range that every
    coordinate falls into; it is computed by scanning when not supplied.
    """

    coords: np.ndarray
    ids: np.ndarray = None
    domain: tuple[float, float] = None
    _pos: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim == 1 and coords.size == 0:
            coords = coords.reshape(0, 0)
        if coords.ndim != 2:
            raise DimensionMismatchError("coords must be a 2-d array")
        if not np.isfinite(coords).all():
            raise DomainError("dataset contains non-finite coordinates")
        ids = self.ids
        if ids is None:
            ids = np.arange(len(coords), dtype=np.int64)
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if ids.shape != (len(coords),):
            raise DimensionMismatchError("ids and coords disagree on record count")
        if len(np.unique(ids)) != len(ids):
            raise HDIndexError("dataset ids must be unique")
        if (ids < 0).any():
            raise HDIndexError("dataset ids must be non-negative")
        domain = self.domain
        if domain is None:
            domain = (float(coords.min()), float(coords.max())) if coords.size else (0.0, 1.0)
        else:
            lo, hi = float(domain[0]), float(domain[1])
            if coords.size and (coords.min() < lo or coords.max() > hi):
                raise DomainError(f"coordinates fall outside domain [{lo}, {hi}]")
            domain = (lo, hi)
        coords.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "_pos", {int(i): p for p, i in enumerate(ids)})

    @classmethod
    def from_records(cls, records: Sequence[VectorRecord], domain=None) -> "Dataset":
        if not records:
            return cls(np.zeros((0, 0)), domain=domain)
        dims = {r.dim for r in records}
        if len(dims) != 1:
            raise DimensionMismatchError(f"records have mixed dimensionality {sorted(dims)}")
        return cls(np.array([r.coords for r in records], dtype=np.float64),
                   np.array([r.id for r in records], dtype=np.int64), domain)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[VectorRecord]:
        for i in range(self.n):
            yield self.record_at(i)

    def record_at(self, pos: int) -> VectorRecord:
        return VectorRecord(int(self.ids[pos]), tuple(float(x) for x in self.coords[pos]))

    def position(self, obj_id: int) -> int:
        return self._pos[int(obj_id)]

    def vector(self, obj_id: int) -> np.ndarray:
        return self.coords[self._pos[int(obj_id)]]

    def subset(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.coords[positions], self.ids[positions], self.domain)

    def without(self, obj_ids) -> "Dataset":
        drop = {int(i) for i in obj_ids}
        keep = [p for p, i in enumerate(self.ids) if int(i) not in drop]
        return self.subset(keep)


@dataclass(frozen=True)
class QueryParams:
    """Candidate budgets for a kANN query.

    ``alpha`` entries are pulled from each tree, ``beta`` survive the
    triangular filter and ``gamma`` the Ptolemaic one; ``k`` answers are
    returned.
    """

    alpha: int = 4096
    beta: int = 4096
    gamma: int = 1024
    k: int = 100

    def __post_init__(self):
        if not 1 <= self.k <= self.gamma <= self.beta <= self.alpha:
            raise ConfigurationError(
                f"need 1 <= k <= gamma <= beta <= alpha, got k={self.k} gamma={self.gamma} "
                f"beta={self.beta} alpha={self.alpha}")

    def clamped(self, n: int) -> "QueryParams":
        """Shrink every budget to at most ``n`` while keeping their order."""
        n = max(int(n), 1)
        return QueryParams(min(self.alpha, n), min(self.beta, n), min(self.gamma, n), min(self.k, n))


class Neighbor(NamedTuple):
    id: int
    distance: float


class ResultSet(tuple):
    """Answers sorted ascending by distance, ties broken by smaller id."""

    def __new__(cls, entries=()):
        entries = [Neighbor(int(i), float(d)) for i, d in entries]
        for a, b in zip(entries, entries[1:]):
            if (a.distance, a.id) > (b.distance, b.id):
                raise HDIndexError("result entries must be sorted by (distance, id)")
        if len({e.id for e in entries}) != len(entries):
            raise HDIndexError("result ids must be distinct")
        return super().__new__(cls, entries)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self]

    @property
    def distances(self) -> list[float]:
        return [e.distance for e in self]


def euclidean(a, b) -> float:
    """L2 distance between two coordinate sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DomainError("non-finite coordinates")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def distances_to(q, points: np.ndarray) -> np.ndarray:
    """Distances from ``q`` to every row of ``points``.

    Both the exact oracle and the index re-rank use this kernel so that equal
    inputs give bit-identical distances.
    """
    q = np.asarray(q, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != q.shape[0]:
        raise DimensionMismatchError(f"query has {q.shape[0]} dims, points have shape {points.shape}")
    diff = points - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def top_k(ids: np.ndarray, dists: np.ndarray, k: int) -> ResultSet:
    order = np.lexsort((ids, dists))[:k]
    return ResultSet(zip(ids[order].tolist(), dists[order].tolist()))
