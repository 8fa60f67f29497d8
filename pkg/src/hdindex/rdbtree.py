"""Disk-paged B+-trees keyed on Hilbert keys with reference distances in the leaves.

Page formats (all integers little-endian, keys big-endian)::

    leaf:      flag:u8=1  count:u16  left:u64  right:u64  entries...
    internal:  flag:u8=2  count:u16  slots...

A leaf entry is ``key[K] obj:u64 refdists:f32[m]``; an internal slot is
``key[K] obj:u64 child:u64`` where ``(key, obj)`` is the smallest entry of the
child subtree. Page id 0 is the store header, so 0 doubles as the null
sibling pointer.
"""

from __future__ import annotations

import bisect
import os
import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .core import ConfigurationError, FormatError, HDIndexError, StorageError

DEFAULT_PAGE_SIZE = 4096
NULL_PAGE = 0

_STORE_HEADER = struct.Struct("<4sHIQQ")  # magic, version, page size, page count, free head
_STORE_MAGIC = b"HDXP"
_STORE_VERSION = 1
USER_AREA_OFFSET = 64

_LEAF_HEADER = struct.Struct("<BHQQ")
_INTERNAL_HEADER = struct.Struct("<BH")
LEAF_FLAG = 1
INTERNAL_FLAG = 2

# flag byte plus two sibling pointers, as budgeted by the leaf-order formula
LEAF_OVERHEAD = 17


class PageTooSmallError(ConfigurationError):
    pass


def leaf_order(dims: int, order: int, m: int, page_size: int = DEFAULT_PAGE_SIZE) -> int:
    """Largest number of entries per leaf under the page budget.

    An entry costs the key (``dims * order / 8`` bytes), ``m`` 4-byte
    reference distances and an 8-byte object pointer; a leaf adds 17 bytes of
    flag and sibling pointers.
    """
    if min(dims, order, m, page_size) <= 0:
        raise ConfigurationError("leaf_order parameters must be positive")
    cost = entry_size(dims, order, m)
    omega = (page_size - LEAF_OVERHEAD) // cost
    if omega < 1:
        raise PageTooSmallError(f"a {page_size}-byte page cannot hold one {cost}-byte entry")
    return omega


def entry_size(dims: int, order: int, m: int) -> int:
    return (dims * order + 7) // 8 + 4 * m + 8


class PageStore:
    """A file of fixed-size pages with a free list. Page 0 is the header."""

    def __init__(self, path, page_size: int = DEFAULT_PAGE_SIZE, create: bool = False):
        self.path = os.fspath(path)
        self.reads = 0
        self.writes = 0
        if create:
            if page_size < USER_AREA_OFFSET + 64:
                raise PageTooSmallError(f"page size {page_size} too small")
            self.page_size = page_size
            self.page_count = 1
            self.free_head = NULL_PAGE
            self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
            self.write_header(b"")
        else:
            try:
                self._fd = os.open(self.path, os.O_RDWR)
            except OSError as exc:
                raise StorageError(f"cannot open {self.path}: {exc}") from exc
            raw = os.pread(self._fd, _STORE_HEADER.size, 0)
            if len(raw) < _STORE_HEADER.size:
                raise FormatError(f"{self.path}: truncated header")
            magic, version, self.page_size, self.page_count, self.free_head = _STORE_HEADER.unpack(raw)
            if magic != _STORE_MAGIC:
                raise FormatError(f"{self.path}: bad magic {magic!r}")
            if version != _STORE_VERSION:
                raise FormatError(f"{self.path}: unsupported version {version}")
            if os.fstat(self._fd).st_size < self.page_count * self.page_size:
                raise FormatError(f"{self.path}: truncated page region")

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def region_end(self) -> int:
        return self.page_count * self.page_size

    def write_header(self, user: bytes) -> None:
        head = _STORE_HEADER.pack(_STORE_MAGIC, _STORE_VERSION, self.page_size, self.page_count, self.free_head)
        if USER_AREA_OFFSET + len(user) > self.page_size:
            raise StorageError("header user area overflow")
        page = head.ljust(USER_AREA_OFFSET, b"\0") + user
        self._pwrite(page.ljust(self.page_size, b"\0"), 0)

    def read_user_area(self, size: int) -> bytes:
        return os.pread(self._fd, size, USER_AREA_OFFSET)

    def _pwrite(self, data: bytes, offset: int) -> None:
        try:
            written = os.pwrite(self._fd, data, offset)
        except OSError as exc:
            raise StorageError(f"write to {self.path} failed: {exc}") from exc
        if written != len(data):
            raise StorageError(f"short write to {self.path}")

    def allocate(self) -> int:
        if self.free_head != NULL_PAGE:
            pid = self.free_head
            self.free_head = struct.unpack("<Q", self.read(pid)[:8])[0]
            return pid
        pid = self.page_count
        self.page_count += 1
        return pid

    def free(self, pid: int) -> None:
        self.write(pid, struct.pack("<Q", self.free_head))
        self.free_head = pid

    def read(self, pid: int) -> bytes:
        if not 0 < pid < self.page_count:
            raise StorageError(f"page {pid} out of range")
        self.reads += 1
        data = os.pread(self._fd, self.page_size, pid * self.page_size)
        if len(data) != self.page_size:
            raise FormatError(f"{self.path}: truncated page {pid}")
        return data

    def write(self, pid: int, data: bytes) -> None:
        if len(data) > self.page_size:
            raise StorageError(f"node of {len(data)} bytes exceeds page size {self.page_size}")
        self.writes += 1
        self._pwrite(data.ljust(self.page_size, b"\0"), pid * self.page_size)

    def write_blob(self, offset: int, data: bytes) -> None:
        self._pwrite(data, offset)
        os.ftruncate(self._fd, offset + len(data))

    def read_blob(self, offset: int, size: int) -> bytes:
        data = os.pread(self._fd, size, offset)
        if len(data) != size:
            raise FormatError(f"{self.path}: truncated trailer")
        return data

    def sync(self) -> None:
        os.fsync(self._fd)


class LeafEntry(NamedTuple):
    key: bytes
    obj: int
    refdists: np.ndarray


@dataclass
class _Leaf:
    pid: int
    left: int
    right: int
    rows: np.ndarray  # structured entries

    def __post_init__(self):
        raw = self.rows["key"]
        self.keys = [raw[i].tobytes() for i in range(len(raw))]
        self.objs = self.rows["obj"].astype(np.int64)
        self.composite = list(zip(self.keys, self.objs.tolist()))


@dataclass
class _Internal:
    pid: int
    seps: list   # (key, obj) of each child's smallest entry
    children: list


class TreeMeta(NamedTuple):
    root: int
    height: int
    count: int
    first_leaf: int


class RdbTree:
    def __init__(self, store: PageStore, key_len: int, m: int, meta: TreeMeta | None = None):
        self.store = store
        self.key_len = key_len
        self.m = m
        self.entry_dtype = np.dtype([("key", "u1", (key_len,)), ("obj", "<u8"), ("rd", "<f4", (m,))])
        page = store.page_size
        self.leaf_capacity = (page - _LEAF_HEADER.size) // self.entry_dtype.itemsize
        self.slot_dtype = np.dtype([("key", "u1", (key_len,)), ("obj", "<u8"), ("child", "<u8")])
        self.fanout = (page - _INTERNAL_HEADER.size) // self.slot_dtype.itemsize
        if self.leaf_capacity < 2 or self.fanout < 3:
            raise PageTooSmallError(
                f"page size {page} gives leaf capacity {self.leaf_capacity} and fanout {self.fanout}")
        meta = meta or TreeMeta(NULL_PAGE, 0, 0, NULL_PAGE)
        self.root, self.height, self.count, self.first_leaf = meta

    @property
    def meta(self) -> TreeMeta:
        return TreeMeta(self.root, self.height, self.count, self.first_leaf)

    def __len__(self) -> int:
        return self.count

    # -- page codecs -------------------------------------------------------

    def _read(self, pid: int):
        raw = self.store.read(pid)
        flag = raw[0]
        if flag == LEAF_FLAG:
            _, count, left, right = _LEAF_HEADER.unpack_from(raw)
            rows = np.frombuffer(raw, self.entry_dtype, count, _LEAF_HEADER.size)
            return _Leaf(pid, left, right, rows)
        if flag == INTERNAL_FLAG:
            _, count = _INTERNAL_HEADER.unpack_from(raw)
            rows = np.frombuffer(raw, self.slot_dtype, count, _INTERNAL_HEADER.size)
            seps = [(rows["key"][i].tobytes(), int(rows["obj"][i])) for i in range(count)]
            return _Internal(pid, seps, rows["child"].astype(np.int64).tolist())
        raise FormatError(f"page {pid} has unknown node flag {flag}")

    def _write_leaf(self, pid: int, left: int, right: int, rows: np.ndarray) -> None:
        if len(rows) > self.leaf_capacity:
            raise HDIndexError("leaf overflow")
        self.store.write(pid, _LEAF_HEADER.pack(LEAF_FLAG, len(rows), left, right)
                         + np.ascontiguousarray(rows, self.entry_dtype).tobytes())

    def _write_internal(self, pid: int, seps, children) -> None:
        rows = np.zeros(len(children), self.slot_dtype)
        for i, ((key, obj), child) in enumerate(zip(seps, children)):
            rows[i] = (np.frombuffer(key, np.uint8), obj, child)
        self.store.write(pid, _INTERNAL_HEADER.pack(INTERNAL_FLAG, len(rows)) + rows.tobytes())

    def make_entries(self, keys: np.ndarray, objs, refdists) -> np.ndarray:
        """Pack parallel arrays into this tree's structured entry layout."""
        rows = np.zeros(len(objs), self.entry_dtype)
        rows["key"] = np.asarray(keys, np.uint8).reshape(len(objs), self.key_len)
        rows["obj"] = np.asarray(objs, np.uint64)
        rd = np.asarray(refdists, np.float64)
        if rd.size and (not np.isfinite(rd).all() or (rd < 0).any()):
            raise HDIndexError("reference distances must be finite and non-negative")
        rows["rd"] = rd.reshape(len(objs), self.m)
        return rows

    # -- construction ------------------------------------------------------

    @staticmethod
    def sort_entries(rows: np.ndarray) -> np.ndarray:
        keys = rows["key"]
        order = np.lexsort((rows["obj"],) + tuple(keys[:, j] for j in range(keys.shape[1] - 1, -1, -1)))
        return rows[order]

    @classmethod
    def bulk_build(cls, store: PageStore, key_len: int, m: int, rows: np.ndarray) -> "RdbTree":
        """Pack entries sorted by ``(key, obj)`` into full leaves, then build internal levels bottom-up."""
        tree = cls(store, key_len, m)
        rows = np.asarray(rows, tree.entry_dtype)
        composite = [(rows["key"][i].tobytes(), int(rows["obj"][i])) for i in range(len(rows))]
        if any(a >= b for a, b in zip(composite, composite[1:])):
            raise HDIndexError("bulk_build requires entries strictly sorted by (key, obj)")
        if not len(rows):
            return tree
        cap = tree.leaf_capacity
        chunks = [(i, min(i + cap, len(rows))) for i in range(0, len(rows), cap)]
        pids = [store.allocate() for _ in chunks]
        for j, (lo, hi) in enumerate(chunks):
            left = pids[j - 1] if j else NULL_PAGE
            right = pids[j + 1] if j + 1 < len(pids) else NULL_PAGE
            tree._write_leaf(pids[j], left, right, rows[lo:hi])
        level = [(composite[lo], pid) for (lo, _), pid in zip(chunks, pids)]
        height = 1
        while len(level) > 1:
            parents = []
            for i in range(0, len(level), tree.fanout):
                group = level[i:i + tree.fanout]
                pid = store.allocate()
                tree._write_internal(pid, [g[0] for g in group], [g[1] for g in group])
                parents.append((group[0][0], pid))
            level = parents
            height += 1
        tree.root, tree.height, tree.count, tree.first_leaf = level[0][1], height, len(rows), pids[0]
        return tree

    def insert(self, key: bytes, obj: int, refdists) -> None:
        row = self.make_entries(np.frombuffer(key, np.uint8)[None, :], [obj], [refdists])
        target = (bytes(key), int(obj))
        if self.root == NULL_PAGE:
            pid = self.store.allocate()
            self._write_leaf(pid, NULL_PAGE, NULL_PAGE, row)
            self.root, self.height, self.count, self.first_leaf = pid, 1, 1, pid
            return
        path = []
        node = self._read(self.root)
        while isinstance(node, _Internal):
            i = max(bisect.bisect_right(node.seps, target) - 1, 0)
            if target < node.seps[0]:
                node.seps[0] = target
                self._write_internal(node.pid, node.seps, node.children)
            path.append((node, i))
            node = self._read(node.children[i])
        pos = bisect.bisect_left(node.composite, target)
        if pos < len(node.composite) and node.composite[pos] == target:
            raise HDIndexError(f"object {obj} already present under this key")
        rows = np.concatenate([node.rows[:pos], row, node.rows[pos:]])
        self.count += 1
        if len(rows) <= self.leaf_capacity:
            self._write_leaf(node.pid, node.left, node.right, rows)
            return
        half = len(rows) // 2
        new_pid = self.store.allocate()
        self._write_leaf(node.pid, node.left, new_pid, rows[:half])
        self._write_leaf(new_pid, node.pid, node.right, rows[half:])
        if node.right != NULL_PAGE:
            nb = self._read(node.right)
            self._write_leaf(nb.pid, new_pid, nb.right, nb.rows)
        split = ((rows["key"][half].tobytes(), int(rows["obj"][half])), new_pid)
        for parent, i in reversed(path):
            parent.seps.insert(i + 1, split[0])
            parent.children.insert(i + 1, split[1])
            if len(parent.children) <= self.fanout:
                self._write_internal(parent.pid, parent.seps, parent.children)
                return
            half = len(parent.children) // 2
            new_pid = self.store.allocate()
            self._write_internal(parent.pid, parent.seps[:half], parent.children[:half])
            self._write_internal(new_pid, parent.seps[half:], parent.children[half:])
            split = (parent.seps[half], new_pid)
        old_root = self._read(self.root)
        old_min = old_root.seps[0] if isinstance(old_root, _Internal) else old_root.composite[0]
        new_root = self.store.allocate()
        self._write_internal(new_root, [old_min, split[0]], [self.root, split[1]])
        self.root = new_root
        self.height += 1

    # -- reads -------------------------------------------------------------

    def leaves(self) -> Iterator[_Leaf]:
        pid = self.first_leaf
        while pid != NULL_PAGE:
            leaf = self._read(pid)
            yield leaf
            pid = leaf.right

    def __iter__(self) -> Iterator[LeafEntry]:
        for leaf in self.leaves():
            for i in range(len(leaf.keys)):
                yield LeafEntry(leaf.keys[i], int(leaf.objs[i]), leaf.rows["rd"][i].astype(np.float64))

    def _lower_bound(self, target):
        node = self._read(self.root)
        while isinstance(node, _Internal):
            i = max(bisect.bisect_left(node.seps, target) - 1, 0)
            node = self._read(node.children[i])
        pos = bisect.bisect_left(node.composite, target)
        return node, pos

    def find(self, key: bytes) -> list[LeafEntry]:
        """All entries stored under ``key``."""
        if self.root == NULL_PAGE:
            return []
        leaf, pos = self._lower_bound((bytes(key), -1))
        out = []
        while leaf is not None:
            while pos < len(leaf.keys):
                if leaf.keys[pos] != key:
                    return out
                out.append(LeafEntry(leaf.keys[pos], int(leaf.objs[pos]), leaf.rows["rd"][pos].astype(np.float64)))
                pos += 1
            leaf = self._read(leaf.right) if leaf.right != NULL_PAGE else None
            pos = 0
        return out

    def _right_of(self, leaf, pos):
        while True:
            for i in range(pos, len(leaf.keys)):
                yield leaf, i
            if leaf.right == NULL_PAGE:
                return
            leaf = self._read(leaf.right)
            pos = 0

    def _left_of(self, leaf, pos):
        # walks leftwards but emits each run of equal keys in ascending obj order
        run, run_key = [], None
        while True:
            for i in range(pos, -1, -1):
                if leaf.keys[i] != run_key:
                    yield from reversed(run)
                    run, run_key = [], leaf.keys[i]
                run.append((leaf, i))
            if leaf.left == NULL_PAGE:
                break
            leaf = self._read(leaf.left)
            pos = len(leaf.keys) - 1
        yield from reversed(run)

    def nearest_alpha_arrays(self, probe: bytes, alpha: int) -> tuple[np.ndarray, np.ndarray]:
        """Object ids and reference distances of the ``alpha`` entries closest to ``probe``.

        Closeness is the absolute numeric difference of keys; ties prefer the
        lower key, then the lower object id.
        """
        if alpha < 1:
            raise ConfigurationError("alpha must be at least 1")
        if self.root == NULL_PAGE:
            return np.zeros(0, np.int64), np.zeros((0, self.m), np.float32)
        probe = bytes(probe)
        if len(probe) != self.key_len:
            raise HDIndexError(f"probe key must be {self.key_len} bytes")
        p = int.from_bytes(probe, "big")
        leaf, pos = self._lower_bound((probe, -1))
        right = self._right_of(leaf, pos)
        if pos > 0:
            left = self._left_of(leaf, pos - 1)
        elif leaf.left != NULL_PAGE:
            prev = self._read(leaf.left)
            left = self._left_of(prev, len(prev.keys) - 1)
        else:
            left = iter(())

        def advance(stream, sign):
            item = next(stream, None)
            if item is None:
                return None
            lf, i = item
            return sign * (int.from_bytes(lf.keys[i], "big") - p), lf, i

        lcur, rcur = advance(left, -1), advance(right, 1)
        picked = []
        while len(picked) < alpha and (lcur or rcur):
            if rcur is None or (lcur is not None and lcur[0] <= rcur[0]):
                picked.append(lcur[1:])
                lcur = advance(left, -1)
            else:
                picked.append(rcur[1:])
                rcur = advance(right, 1)
        objs = np.array([lf.objs[i] for lf, i in picked], dtype=np.int64)
        rd = np.empty((len(picked), self.m), np.float32)
        for j, (lf, i) in enumerate(picked):
            rd[j] = lf.rows["rd"][i]
        return objs, rd

    def nearest_alpha(self, probe: bytes, alpha: int) -> list[LeafEntry]:
        objs, rd = self.nearest_alpha_arrays(probe, alpha)
        return [LeafEntry(b"", int(o), r.astype(np.float64)) for o, r in zip(objs, rd)]

    def check(self) -> None:
        """Verify structural invariants; raises ``HDIndexError`` on the first violation."""
        if self.root == NULL_PAGE:
            if self.count:
                raise HDIndexError("empty tree with nonzero count")
            return
        depths = set()
        chain = []

        def walk(pid, depth, lo):
            node = self._read(pid)
            if isinstance(node, _Leaf):
                depths.add(depth)
                if len(node.keys) > self.leaf_capacity or not node.keys:
                    raise HDIndexError(f"leaf {pid} has {len(node.keys)} entries")
                if lo is not None and node.composite[0] != lo:
                    raise HDIndexError(f"separator mismatch at leaf {pid}")
                chain.append(pid)
                return node.composite[0]
            if len(node.children) > self.fanout:
                raise HDIndexError(f"internal node {pid} overflows")
            if lo is not None and node.seps[0] != lo:
                raise HDIndexError(f"separator mismatch at node {pid}")
            for sep, child in zip(node.seps, node.children):
                walk(child, depth + 1, sep)
            return node.seps[0]

        walk(self.root, 1, None)
        if depths != {self.height}:
            raise HDIndexError(f"leaves at depths {depths}, height {self.height}")
        linked = [leaf.pid for leaf in self.leaves()]
        if linked != chain:
            raise HDIndexError("leaf chain disagrees with tree order")
        prev, total, left = None, 0, NULL_PAGE
        for leaf in self.leaves():
            if leaf.left != left:
                raise HDIndexError(f"bad left pointer on leaf {leaf.pid}")
            left = leaf.pid
            for c in leaf.composite:
                if prev is not None and c <= prev:
                    raise HDIndexError("entries out of order")
                prev = c
                total += 1
        if total != self.count:
            raise HDIndexError(f"tree holds {total} entries, count says {self.count}")
