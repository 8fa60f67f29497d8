"""Construction, persistence and updates of the multi-tree index.

An index lives in two files: ``<path>`` holds the page region (all trees)
followed by a metadata trailer, and ``<path>.desc`` holds the full
descriptors, one ``dim:i32 values:f64[dim]`` record per object, addressed
through the offset table kept in the trailer.
"""

from __future__ import annotations

import io
import logging
import os
import shutil
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import hilbert, refsel
from .core import ConfigurationError, Dataset, DimensionMismatchError, FormatError, HDIndexError
from .rdbtree import DEFAULT_PAGE_SIZE, PageStore, RdbTree, TreeMeta
from .refsel import ReferenceSet

logger = logging.getLogger(__name__)

_TRAILER_MAGIC = b"HDXI"
_TRAILER_VERSION = 1
_POINTER = struct.Struct("<QQI")  # trailer offset, length, crc32
METHODS = ("sss", "sss-dyn", "random")


class Partitioning(tuple):
    """Contiguous, equal-width ``(start, stop)`` dimension ranges."""

    @property
    def tau(self) -> int:
        return len(self)

    @property
    def width(self) -> int:
        return self[0][1] - self[0][0]


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def partition_dimensions(dim: int, tau: int) -> Partitioning:
    if dim < 1 or tau < 1:
        raise ConfigurationError("dimensionality and tree count must be positive")
    if dim % tau:
        nearest = min(_divisors(dim), key=lambda d: (abs(d - tau), d))
        raise ConfigurationError(f"tau={tau} does not divide dim={dim}; nearest valid tau is {nearest}")
    eta = dim // tau
    return Partitioning((i * eta, (i + 1) * eta) for i in range(tau))


def is_byte_valued(data: Dataset) -> bool:
    c = data.coords
    return bool(c.size) and c.min() >= 0 and c.max() <= 255 and np.array_equal(c, np.round(c))


@dataclass(frozen=True)
class IndexConfig:
    dim: int
    tau: int = 8
    omega: int = 32
    m: int = 10
    page_size: int = DEFAULT_PAGE_SIZE
    f: float = 0.3
    method: str = "sss"
    seed: int = 0
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if self.tau < 1 or self.dim % self.tau:
            partition_dimensions(self.dim, self.tau)
        if self.dim // self.tau > hilbert.MAX_DIMS:
            raise ConfigurationError(
                f"each tree would cover {self.dim // self.tau} dimensions; at most {hilbert.MAX_DIMS} supported")
        if not 1 <= self.omega <= 64:
            raise ConfigurationError(f"Hilbert order must be in [1, 64], got {self.omega}")
        if self.m < 2:
            raise ConfigurationError("need at least two reference objects")
        if not 0 < self.f < 1:
            raise ConfigurationError(f"spread fraction must be in (0, 1), got {self.f}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown reference selection method {self.method!r}")
        if not self.domain[1] > self.domain[0]:
            raise ConfigurationError(f"degenerate value domain {self.domain}")

    @property
    def eta(self) -> int:
        return self.dim // self.tau

    @property
    def key_len(self) -> int:
        return hilbert.key_bytes(self.eta, self.omega)

    @classmethod
    def for_data(cls, data: Dataset, **overrides) -> "IndexConfig":
        """Defaults tuned to ``data``: 8 trees (16 from 500 dimensions up),
        order 8 over [0, 255] for byte-valued data and order 32 otherwise."""
        byte_valued = is_byte_valued(data)
        params = dict(
            dim=data.dim,
            tau=16 if data.dim >= 500 else 8,
            omega=8 if byte_valued else 32,
            domain=(0.0, 255.0) if byte_valued else data.domain,
        )
        if params["domain"][0] == params["domain"][1]:
            params["domain"] = (params["domain"][0], params["domain"][0] + 1.0)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def array(self, arr, dtype):
        self.buf.write(np.ascontiguousarray(arr, dtype).tobytes())

    def text(self, s: str):
        raw = s.encode()
        self.pack("H", len(raw))
        self.buf.write(raw)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.raw):
            raise FormatError("index trailer truncated")
        out = self.raw[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt):
        s = struct.Struct("<" + fmt)
        vals = s.unpack(self.take(s.size))
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype, count, shape=None):
        dt = np.dtype(dtype)
        arr = np.frombuffer(self.take(dt.itemsize * count), dt).copy()
        return arr.reshape(shape) if shape else arr

    def text(self) -> str:
        return self.take(self.unpack("H")).decode()


class HDIndex:
    """An open index: τ trees over one page store, references, descriptors and tombstones."""

    def __init__(self, path, config: IndexConfig, refs: ReferenceSet, store: PageStore,
                 trees: list[RdbTree], offsets: dict, tombstones: set):
        self.path = os.fspath(path)
        self.config = config
        self.partitioning = partition_dimensions(config.dim, config.tau)
        self.refs = refs
        self.store = store
        self.trees = trees
        self.offsets = offsets
        self.tombstones = tombstones
        self._desc = None
        self._desc_size = -1

    # -- descriptors -------------------------------------------------------

    @property
    def desc_path(self) -> str:
        return self.path + ".desc"

    @property
    def _record_dtype(self):
        return np.dtype([("dim", "<i4"), ("v", "<f8", (self.config.dim,))])

    def _descriptors(self):
        size = os.path.getsize(self.desc_path)
        if self._desc is None or size != self._desc_size:
            self._desc = np.memmap(self.desc_path, self._record_dtype, "r") if size else np.zeros(0, self._record_dtype)
            self._desc_size = size
        return self._desc

    def fetch(self, ids) -> np.ndarray:
        """Full descriptors for ``ids`` (read in the given order)."""
        ids = np.asarray(ids, dtype=np.int64)
        if not len(ids):
            return np.zeros((0, self.config.dim))
        try:
            offs = np.fromiter((self.offsets[int(i)] for i in ids), np.int64, len(ids))
        except KeyError as exc:
            raise HDIndexError(f"unknown object id {exc.args[0]}") from None
        return np.asarray(self._descriptors()["v"][offs // self._record_dtype.itemsize])

    # -- properties --------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.offsets)

    @property
    def live_count(self) -> int:
        return len(self.offsets) - len(self.tombstones)

    def live_ids(self) -> np.ndarray:
        return np.array(sorted(i for i in self.offsets if i not in self.tombstones), dtype=np.int64)

    def keys_for(self, coords) -> list[np.ndarray]:
        """Hilbert keys of ``coords`` (``(n, dim)``) for each partition."""
        coords = np.atleast_2d(np.asarray(coords, np.float64))
        if coords.shape[1] != self.config.dim:
            raise DimensionMismatchError(f"expected {self.config.dim} dims, got {coords.shape[1]}")
        out = []
        for lo, hi in self.partitioning:
            cells = hilbert.quantize(coords[:, lo:hi], self.config.domain, self.config.omega)
            out.append(hilbert.encode_many(cells, self.config.eta, self.config.omega))
        return out

    # -- updates -----------------------------------------------------------

    def insert_object(self, obj_id: int, coords) -> None:
        """Add one object to every tree; the reference set is left unchanged."""
        obj_id = int(obj_id)
        coords = np.asarray(coords, np.float64)
        if coords.shape != (self.config.dim,):
            raise DimensionMismatchError(f"expected {self.config.dim} dims, got shape {coords.shape}")
        if not np.isfinite(coords).all():
            raise HDIndexError("cannot insert non-finite coordinates")
        if obj_id < 0:
            raise HDIndexError("object ids must be non-negative")
        if obj_id in self.offsets:
            raise HDIndexError(f"object id {obj_id} already in use")
        rd = self.refs.distances(coords[None, :])[0]
        keys = self.keys_for(coords[None, :])
        for tree, key in zip(self.trees, keys):
            tree.insert(key[0].tobytes(), obj_id, rd)
        self.offsets[obj_id] = _append_descriptors(self.desc_path, self._record_dtype, coords[None, :])[0]
        self.flush()

    def delete_object(self, obj_id: int) -> None:
        obj_id = int(obj_id)
        if obj_id not in self.offsets:
            raise HDIndexError(f"unknown object id {obj_id}")
        if obj_id in self.tombstones:
            raise HDIndexError(f"object id {obj_id} already deleted")
        self.tombstones.add(obj_id)
        self.flush()

    # -- persistence -------------------------------------------------------

    def _trailer(self) -> bytes:
        w = _Writer()
        w.buf.write(_TRAILER_MAGIC)
        w.pack("H", _TRAILER_VERSION)
        c = self.config
        w.pack("IIIIIdqdd", c.dim, c.tau, c.omega, c.m, c.page_size, c.f, c.seed, *c.domain)
        w.text(c.method)
        r = self.refs
        w.pack("I", r.m)
        w.array(r.ids, "<i8")
        w.array(r.coords, "<f8")
        w.array(r.pairwise, "<f8")
        w.pack("dd", r.dmax_est, r.f)
        w.pack("I", len(self.trees))
        for t in self.trees:
            w.pack("QIQQ", t.root, t.height, t.count, t.first_leaf)
        nbits = max(self.offsets, default=-1) + 1
        bits = np.zeros(nbits, bool)
        bits[list(self.tombstones)] = True
        w.pack("Q", nbits)
        w.array(np.packbits(bits, bitorder="little"), "u1")
        ids = np.array(sorted(self.offsets), np.int64)
        w.pack("Q", len(ids))
        w.array(ids, "<i8")
        w.array([self.offsets[int(i)] for i in ids], "<u8")
        return w.buf.getvalue()

    def flush(self) -> None:
        """Write the metadata trailer after the page region and point the header at it."""
        raw = self._trailer()
        offset = self.store.region_end
        self.store.write_blob(offset, raw)
        self.store.write_header(_POINTER.pack(offset, len(raw), zlib.crc32(raw)))

    def persist(self, path=None) -> "HDIndex":
        """Flush to disk. With a new ``path``, also copy both files there and return the copy opened."""
        self.flush()
        if path is None or os.path.abspath(path) == os.path.abspath(self.path):
            return self
        path = os.fspath(path)
        shutil.copyfile(self.path, path)
        shutil.copyfile(self.desc_path, path + ".desc")
        return load(path)

    def close(self) -> None:
        self._desc = None
        self.store.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def knn(self, q, params=None, filter_mode="triangular", stats=None):
        from .query import knn
        return knn(self, q, params, filter_mode, stats)


def _append_descriptors(path, dtype, coords) -> list[int]:
    rows = np.zeros(len(coords), dtype)
    rows["dim"] = coords.shape[1] if coords.ndim == 2 else 0
    rows["v"] = coords
    with open(path, "ab") as fh:
        start = fh.tell()
        fh.write(rows.tobytes())
    return [start + i * dtype.itemsize for i in range(len(coords))]


def build(data: Dataset, cfg: IndexConfig | None = None, path=None, references: ReferenceSet | None = None) -> HDIndex:
    """Build and persist an index over ``data``.

    References are selected with ``cfg.method`` unless ``references`` is given.
    Without ``path`` the index is written to a fresh temporary directory.
    """
    cfg = cfg or IndexConfig.for_data(data)
    if data.n and data.dim != cfg.dim:
        raise DimensionMismatchError(f"data has {data.dim} dims, config expects {cfg.dim}")
    if path is None:
        path = os.path.join(tempfile.mkdtemp(prefix="hdindex-"), "index.hdx")
    path = os.fspath(path)
    if references is None:
        if data.n == 0:
            raise HDIndexError("cannot select reference objects from an empty dataset; pass references")
        m = min(cfg.m, data.n)
        if data.n == 1:
            references = refsel.reference_set_from_ids(data, data.ids)
        else:
            references = refsel.select(data, cfg.method, m, cfg.f, seed=cfg.seed)
    if references.coords.shape[1] != cfg.dim:
        raise DimensionMismatchError("reference objects do not match index dimensionality")
    cfg = IndexConfig(**{**asdict(cfg), "m": max(references.m, 2)}) if references.m != cfg.m else cfg
    if references.m < 2:
        # a single-object index still needs an m-wide leaf layout; pad with the one reference
        references = ReferenceSet(np.repeat(references.ids, 2), np.repeat(references.coords, 2, 0),
                                  np.zeros((2, 2)), references.dmax_est, references.f)
    store = PageStore(path, cfg.page_size, create=True)
    rdist = references.distances(data.coords) if data.n else np.zeros((0, references.m))
    idx = HDIndex(path, cfg, references, store, [], {}, set())
    keys = idx.keys_for(data.coords) if data.n else [np.zeros((0, cfg.key_len), np.uint8)] * cfg.tau
    for i, tree_keys in enumerate(keys):
        proto = RdbTree(store, cfg.key_len, references.m)
        rows = RdbTree.sort_entries(proto.make_entries(tree_keys, data.ids, rdist))
        idx.trees.append(RdbTree.bulk_build(store, cfg.key_len, references.m, rows))
        logger.debug("tree %d: %d entries, height %d", i, len(rows), idx.trees[-1].height)
    with open(idx.desc_path, "wb"):
        pass
    offsets = _append_descriptors(idx.desc_path, idx._record_dtype, data.coords)
    idx.offsets = dict(zip(data.ids.tolist(), offsets))
    idx.flush()
    return idx


def load(path) -> HDIndex:
    path = os.fspath(path)
    store = PageStore(path)
    try:
        offset, length, crc = _POINTER.unpack(store.read_user_area(_POINTER.size))
        if offset != store.region_end:
            raise FormatError(f"{path}: trailer pointer does not follow the page region")
        raw = store.read_blob(offset, length)
        if zlib.crc32(raw) != crc:
            raise FormatError(f"{path}: trailer checksum mismatch")
        r = _Reader(raw)
        if r.take(4) != _TRAILER_MAGIC:
            raise FormatError(f"{path}: bad trailer magic")
        version = r.unpack("H")
        if version != _TRAILER_VERSION:
            raise FormatError(f"{path}: unsupported index version {version}")
        dim, tau, omega, m, page_size, f, seed, lo, hi = r.unpack("IIIIIdqdd")
        method = r.text()
        cfg = IndexConfig(dim, tau, omega, m, page_size, f, method, seed, (lo, hi))
        rm = r.unpack("I")
        refs = ReferenceSet(r.array("<i8", rm), r.array("<f8", rm * dim, (rm, dim)),
                            r.array("<f8", rm * rm, (rm, rm)), *r.unpack("dd"))
        trees = [RdbTree(store, cfg.key_len, rm, TreeMeta(*r.unpack("QIQQ"))) for _ in range(r.unpack("I"))]
        nbits = r.unpack("Q")
        bits = np.unpackbits(r.array("u1", (nbits + 7) // 8), bitorder="little")[:nbits]
        tombstones = set(np.flatnonzero(bits).tolist())
        count = r.unpack("Q")
        ids = r.array("<i8", count)
        offs = r.array("<u8", count)
    except (FormatError, ConfigurationError, struct.error) as exc:
        store.close()
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: corrupt index metadata ({exc})") from exc
    idx = HDIndex(path, cfg, refs, store, trees, dict(zip(ids.tolist(), offs.tolist())), tombstones)
    if not os.path.exists(idx.desc_path):
        store.close()
        raise FormatError(f"{path}: descriptor file {idx.desc_path} missing")
    return idx
