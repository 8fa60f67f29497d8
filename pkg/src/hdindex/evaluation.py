"""Exact k-NN ground truth and answer-quality metrics (approximation ratio, AP@k, MAP@k)."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, FormatError, HDIndexError, ResultSet, distances_to, top_k

_NEIGHBORS_HEADER = struct.Struct("<4sHII32s")  # magic, version, k, query count, dataset sha256
GROUND_TRUTH_MAGIC = b"HDGT"
RESULTS_MAGIC = b"HDRS"
_VERSION = 1
_PAIR = np.dtype([("id", "<i8"), ("dist", "<f8")])


def exact_knn(data: Dataset, q, k: int) -> ResultSet:
    """Linear-scan k nearest neighbours; ties go to the smaller id. ``k > n`` ranks everything."""
    if data.n == 0:
        return ResultSet()
    return top_k(data.ids, distances_to(q, data.coords), k)


def approximation_ratio(approx: ResultSet, exact: ResultSet) -> float:
    """Mean over ranks of ``d(q, returned_i) / d(q, true_i)``.

    Ranks whose true distance is zero count as 1 when the returned distance
    is also zero and are left out otherwise. Only ranks present in both lists
    are compared; with nothing left to compare the ratio is 1.
    """
    terms = []
    for a, e in zip(approx, exact):
        if e.distance == 0:
            if a.distance == 0:
                terms.append(1.0)
            continue
        terms.append(a.distance / e.distance)
    return float(np.mean(terms)) if terms else 1.0


def average_precision(approx_ids, exact_ids, k: int) -> float:
    """AP@k: precision at every relevant rank, summed and divided by ``k``.

    An item is relevant when it appears anywhere in the true top-``k``.
    Missing slots in a short answer count as irrelevant.
    """
    if k < 1:
        raise HDIndexError("k must be positive")
    truth = set(list(exact_ids)[:k])
    hits = 0
    total = 0.0
    for rank, obj in enumerate(list(approx_ids)[:k], start=1):
        if obj in truth:
            hits += 1
            total += hits / rank
    return total / k


def mean_average_precision(ap_values) -> float:
    values = list(ap_values)
    if not values:
        raise HDIndexError("MAP needs at least one query")
    return float(np.mean(values))


@dataclass
class EvalReport:
    k: int
    ap: list = field(default_factory=list)
    ratio: list = field(default_factory=list)

    @property
    def queries(self) -> int:
        return len(self.ap)

    @property
    def map(self) -> float:
        return mean_average_precision(self.ap)

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratio)) if self.ratio else float("nan")

    def add(self, approx: ResultSet, exact: ResultSet) -> None:
        self.ap.append(average_precision(approx.ids, exact.ids, self.k))
        self.ratio.append(approximation_ratio(approx, exact))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "queries": self.queries,
            "map": self.map if self.ap else None,
            "mean_ratio": self.mean_ratio if self.ratio else None,
            "per_query": [{"ap": a, "ratio": r} for a, r in zip(self.ap, self.ratio)],
        }

    def summary(self) -> str:
        if not self.ap:
            return f"queries=0 k={self.k}"
        return f"queries={self.queries} k={self.k} MAP@{self.k}={self.map:.4f} ratio={self.mean_ratio:.4f}"


def evaluate(results, truths, k: int) -> EvalReport:
    results, truths = list(results), list(truths)
    if len(results) != len(truths):
        raise HDIndexError(f"{len(results)} result sets but {len(truths)} ground-truth sets")
    report = EvalReport(k)
    for approx, exact in zip(results, truths):
        report.add(ResultSet(list(approx)[:k]), ResultSet(list(exact)[:k]))
    return report


def dissociation_case(k: int = 10, spread: float = 0.001):
    """A dataset, query and answer whose ratio is near 1.1 but whose MAP is 0.

    The true neighbours sit at distances ``1 + i*spread`` on one axis and the
    answer returns a disjoint set at ``1.1 + i*spread``.
    """
    near = [[1.0 + i * spread, 0.0] for i in range(k)]
    far = [[0.0, 1.1 + i * spread] for i in range(k)]
    data = Dataset(np.array(near + far))
    q = np.zeros(2)
    approx = ResultSet((k + i, far[i][1]) for i in range(k))
    return data, q, approx


def dataset_checksum(data: Dataset) -> bytes:
    h = hashlib.sha256()
    h.update(struct.pack("<QQ", data.n, data.dim))
    h.update(data.ids.tobytes())
    h.update(data.coords.tobytes())
    return h.digest()


def write_neighbors(path, results, k: int, checksum: bytes = b"", magic: bytes = GROUND_TRUTH_MAGIC) -> None:
    """Write per-query ``(id, distance)`` lists: a header, then for each query
    a ``u32`` count followed by that many ``(i64, f64)`` pairs."""
    results = list(results)
    with open(path, "wb") as fh:
        fh.write(_NEIGHBORS_HEADER.pack(magic, _VERSION, k, len(results), checksum.ljust(32, b"\0")[:32]))
        for rs in results:
            rows = np.zeros(len(rs), _PAIR)
            if len(rs):
                rows["id"], rows["dist"] = zip(*rs)
            fh.write(struct.pack("<I", len(rows)))
            fh.write(rows.tobytes())


def read_neighbors(path, magic: bytes | None = None):
    """Returns ``(results, k, checksum, magic)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _NEIGHBORS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got, version, k, count, checksum = _NEIGHBORS_HEADER.unpack_from(raw)
    if got not in (GROUND_TRUTH_MAGIC, RESULTS_MAGIC) or (magic is not None and got != magic):
        raise FormatError(f"{path}: unexpected magic {got!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = _NEIGHBORS_HEADER.size
    out = []
    for _ in range(count):
        if pos + 4 > len(raw):
            raise FormatError(f"{path}: truncated record")
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        end = pos + n * _PAIR.itemsize
        if end > len(raw):
            raise FormatError(f"{path}: truncated record")
        rows = np.frombuffer(raw[pos:end], _PAIR)
        out.append(ResultSet(zip(rows["id"].tolist(), rows["dist"].tolist())))
        pos = end
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return out, k, checksum, got


def ground_truth(data: Dataset, queries, k: int) -> list[ResultSet]:
    return [exact_knn(data, q, k) for q in np.atleast_2d(queries) if len(q)]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def paths_sha256(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(file_sha256(p).encode() if os.path.exists(p) else b"-")
    return h.hexdigest()
