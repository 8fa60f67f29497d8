"""Readers and writers for the texmex ``.fvecs`` / ``.bvecs`` / ``.ivecs`` formats.

Every record is a little-endian ``int32`` dimension followed by that many
components: ``float32`` (f), ``uint8`` (b) or ``int32`` (i).
"""

from __future__ import annotations

import os

import numpy as np

from .core import Dataset, DimensionMismatchError, DomainError, FormatError

KINDS = {"f": np.dtype("<f4"), "b": np.dtype("u1"), "i": np.dtype("<i4")}
_SUFFIX = {".fvecs": "f", ".bvecs": "b", ".ivecs": "i"}
DEFAULT_SCALE = 100_000
_INT32 = np.iinfo(np.int32)


def kind_for(path, kind: str | None = None) -> str:
    if kind is None:
        kind = _SUFFIX.get(os.path.splitext(os.fspath(path))[1].lower())
        if kind is None:
            raise FormatError(f"cannot infer vector kind from {path!r}; pass one of {sorted(KINDS)}")
    if kind not in KINDS:
        raise FormatError(f"unknown vector kind {kind!r}")
    return kind


def read_vecs(path, kind: str | None = None, domain=None) -> Dataset:
    """Load a vecs file. Ids follow file order; byte files default to the [0, 255] domain."""
    kind = kind_for(path, kind)
    elem = KINDS[kind]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return Dataset(np.zeros((0, 0)), domain=domain)
    if raw.size < 4:
        raise FormatError(f"{path}: truncated record header")
    dim = int(raw[:4].view("<i4")[0])
    if dim <= 0:
        raise FormatError(f"{path}: invalid dimension {dim}")
    rec = np.dtype([("dim", "<i4"), ("v", elem, (dim,))])
    if raw.size % rec.itemsize:
        raise FormatError(f"{path}: {raw.size} bytes is not a whole number of {rec.itemsize}-byte records")
    rows = raw.view(rec)
    bad = np.flatnonzero(rows["dim"] != dim)
    if bad.size:
        raise DimensionMismatchError(f"{path}: record {bad[0]} has dimension {rows['dim'][bad[0]]}, expected {dim}")
    if domain is None and kind == "b":
        domain = (0.0, 255.0)
    return Dataset(rows["v"].astype(np.float64), domain=domain)


def write_vecs(path, data, kind: str | None = None) -> None:
    kind = kind_for(path, kind)
    coords = data.coords if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data))
    if coords.size == 0:
        open(path, "wb").close()
        return
    elem = KINDS[kind]
    cast = coords.astype(elem)
    if kind != "f" and not np.array_equal(cast, coords):
        raise DomainError(f"values do not fit {elem} exactly")
    rec = np.dtype([("dim", "<i4"), ("v", elem, (coords.shape[1],))])
    rows = np.zeros(len(coords), rec)
    rows["dim"] = coords.shape[1]
    rows["v"] = cast
    rows.tofile(path)


def deduplicate(data: Dataset) -> Dataset:
    """Drop repeated points, keeping first occurrences, and renumber ids densely."""
    if data.n == 0:
        return data
    _, first = np.unique(data.coords, axis=0, return_index=True)
    keep = np.sort(first)
    return Dataset(data.coords[keep], domain=data.domain)


def scale_to_integer(data: Dataset, factor: float = DEFAULT_SCALE) -> Dataset:
    """Multiply by ``factor`` and round to the nearest integer (int32 range)."""
    if not factor > 0:
        raise DomainError(f"scale factor must be positive, got {factor}")
    scaled = np.rint(data.coords * factor)
    over = np.flatnonzero((scaled < _INT32.min) | (scaled > _INT32.max))
    if over.size:
        row = over[0] // max(data.dim, 1)
        raise DomainError(f"record {int(data.ids[row])} overflows int32 after scaling by {factor}")
    lo, hi = data.domain
    return Dataset(scaled, data.ids, (np.rint(lo * factor), np.rint(hi * factor)))


def reserve_queries(data: Dataset, count: int, seed=None) -> tuple[Dataset, Dataset]:
    """Set aside ``count`` random points as queries; the rest become the indexed set.

    Both parts get dense ids in their original relative order.
    """
    if not 0 <= count <= data.n:
        raise DomainError(f"cannot reserve {count} queries from {data.n} points")
    rng = np.random.default_rng(seed)
    picked = np.zeros(data.n, bool)
    picked[rng.choice(data.n, size=count, replace=False)] = True
    return (Dataset(data.coords[~picked], domain=data.domain),
            Dataset(data.coords[picked], domain=data.domain))
