"""Hilbert curve keys for quantized points, in any number of dimensions.

The mapping follows Butz's construction as formulated with gray codes,
entry points and intra-cell directions: for each of the ``order`` bit levels
the ``dims`` coordinate bits form a word that is transformed into the current
sub-cube frame, gray-decoded into the next ``dims`` bits of the key, and the
frame is updated. Words are held in ``uint64`` so up to 64 dimensions are
supported; every routine runs vectorised over a batch of points.

Keys are fixed-width big-endian byte strings of ``dims * order / 8`` bytes
(padded up to whole bytes), so byte order equals numeric order.
"""

from __future__ import annotations

import numpy as np

from .core import ConfigurationError, DomainError

MAX_DIMS = 64
_CHUNK = 8192
_U1 = np.uint64(1)


def key_bytes(dims: int, order: int) -> int:
    return (dims * order + 7) // 8


def _check(dims: int, order: int) -> None:
    if not 1 <= dims <= MAX_DIMS:
        raise ConfigurationError(f"dims must be in [1, {MAX_DIMS}], got {dims}")
    if not 1 <= order <= 64:
        raise ConfigurationError(f"order must be in [1, 64], got {order}")


def quantize(coords, domain: tuple[float, float], order: int) -> np.ndarray:
    """Map real coordinates onto integer grid cells ``[0, 2**order - 1]``.

    Works on a single point or an ``(n, dims)`` batch. Values outside the
    domain are clamped to the boundary cells.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ConfigurationError(f"degenerate domain [{lo}, {hi}]")
    x = np.asarray(coords, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DomainError("cannot quantize non-finite coordinates")
    cells = 1 << order
    scaled = np.floor((x - lo) / (hi - lo) * cells)
    return np.clip(scaled, 0, cells - 1).astype(np.uint64)


def _rotr(x, r, dims, mask):
    # r is an array of rotation amounts in [0, dims)
    left = np.where(r == 0, np.uint64(0), np.uint64(dims) - r)
    rotated = ((x >> r) | (x << left)) & mask
    return np.where(r == 0, x, rotated)


def _rotl(x, r, dims, mask):
    right = np.where(r == 0, np.uint64(0), np.uint64(dims) - r)
    rotated = ((x << r) | (x >> right)) & mask
    return np.where(r == 0, x, rotated)


def _gray(x):
    return x ^ (x >> _U1)


def _gray_inverse(g, dims):
    x = g.copy()
    shift = 1
    while shift < dims:
        x ^= x >> np.uint64(shift)
        shift <<= 1
    return x


def _trailing_ones(x, dims, mask):
    zeros = ~x & mask
    lowest = zeros & (~zeros + _U1)
    count = np.bitwise_count(lowest - _U1).astype(np.uint64)
    return np.where(zeros == 0, np.uint64(dims), count)


def _entry(w):
    # entry point of sub-cell w: gray(2 * floor((w - 1) / 2)), and 0 for w = 0
    safe = np.where(w == 0, _U1, w)
    return np.where(w == 0, np.uint64(0), _gray(((safe - _U1) >> _U1) << _U1))


def _direction(w, dims, mask):
    safe = np.where(w == 0, _U1, w)
    odd = (w & _U1).astype(bool)
    t = np.where(odd, _trailing_ones(safe, dims, mask), _trailing_ones(safe - _U1, dims, mask))
    return np.where(w == 0, np.uint64(0), t % np.uint64(dims))


def _words_from_cells(cells: np.ndarray, level: int, weights: np.ndarray) -> np.ndarray:
    bits = (cells >> np.uint64(level)) & _U1
    return (bits << weights).sum(axis=1, dtype=np.uint64)


def _encode_words(cells: np.ndarray, dims: int, order: int) -> np.ndarray:
    """Return the ``(n, order)`` array of ``dims``-bit key words, most significant first."""
    n = cells.shape[0]
    mask = np.uint64((1 << dims) - 1)
    weights = np.arange(dims, dtype=np.uint64)
    e = np.zeros(n, dtype=np.uint64)
    d = np.zeros(n, dtype=np.uint64)
    out = np.empty((n, order), dtype=np.uint64)
    dims_u = np.uint64(dims)
    for j, level in enumerate(range(order - 1, -1, -1)):
        l = _words_from_cells(cells, level, weights)
        l = _rotr(l ^ e, (d + _U1) % dims_u, dims, mask)
        w = _gray_inverse(l, dims)
        out[:, j] = w
        e = e ^ _rotl(_entry(w), (d + _U1) % dims_u, dims, mask)
        d = (d + _direction(w, dims, mask) + _U1) % dims_u
    return out


def _decode_words(words: np.ndarray, dims: int, order: int) -> np.ndarray:
    n = words.shape[0]
    mask = np.uint64((1 << dims) - 1)
    weights = np.arange(dims, dtype=np.uint64)
    e = np.zeros(n, dtype=np.uint64)
    d = np.zeros(n, dtype=np.uint64)
    cells = np.zeros((n, dims), dtype=np.uint64)
    dims_u = np.uint64(dims)
    for j, level in enumerate(range(order - 1, -1, -1)):
        w = words[:, j]
        l = _rotl(_gray(w), (d + _U1) % dims_u, dims, mask) ^ e
        cells |= ((l[:, None] >> weights) & _U1) << np.uint64(level)
        e = e ^ _rotl(_entry(w), (d + _U1) % dims_u, dims, mask)
        d = (d + _direction(w, dims, mask) + _U1) % dims_u
    return cells


def _pack(words: np.ndarray, dims: int, order: int) -> np.ndarray:
    shifts = np.arange(dims - 1, -1, -1, dtype=np.uint64)
    bits = ((words[:, :, None] >> shifts) & _U1).astype(np.uint8)
    bits = bits.reshape(words.shape[0], dims * order)
    pad = key_bytes(dims, order) * 8 - dims * order
    if pad:
        bits = np.concatenate([np.zeros((bits.shape[0], pad), np.uint8), bits], axis=1)
    return np.packbits(bits, axis=1)


def _unpack(keys: np.ndarray, dims: int, order: int) -> np.ndarray:
    bits = np.unpackbits(keys, axis=1)[:, -dims * order:].astype(np.uint64)
    bits = bits.reshape(keys.shape[0], order, dims)
    shifts = np.arange(dims - 1, -1, -1, dtype=np.uint64)
    return (bits << shifts).sum(axis=2, dtype=np.uint64)


def encode_many(cells, dims: int, order: int) -> np.ndarray:
    """Encode an ``(n, dims)`` array of grid cells into an ``(n, nbytes)`` uint8 key array."""
    _check(dims, order)
    cells = np.asarray(cells)
    if cells.ndim != 2 or cells.shape[1] != dims:
        raise DomainError(f"expected cells of shape (n, {dims}), got {cells.shape}")
    if cells.dtype.kind == "i" and np.any(cells < 0):
        raise DomainError("negative cell index")
    cells = cells.astype(np.uint64)
    if order < 64 and np.any(cells >> np.uint64(order)):
        raise DomainError(f"cell index out of range for order {order}")
    out = np.empty((cells.shape[0], key_bytes(dims, order)), dtype=np.uint8)
    for start in range(0, cells.shape[0], _CHUNK):
        chunk = cells[start:start + _CHUNK]
        out[start:start + _CHUNK] = _pack(_encode_words(chunk, dims, order), dims, order)
    return out


def decode_many(keys, dims: int, order: int) -> np.ndarray:
    _check(dims, order)
    keys = np.asarray(keys, dtype=np.uint8)
    nbytes = key_bytes(dims, order)
    if keys.ndim != 2 or keys.shape[1] != nbytes:
        raise DomainError(f"expected keys of shape (n, {nbytes}), got {keys.shape}")
    pad = nbytes * 8 - dims * order
    if pad and keys.size and np.any(np.unpackbits(keys[:, :1], axis=1)[:, :pad]):
        raise DomainError(f"key exceeds 2**{dims * order}")
    out = np.empty((keys.shape[0], dims), dtype=np.uint64)
    for start in range(0, keys.shape[0], _CHUNK):
        chunk = keys[start:start + _CHUNK]
        out[start:start + _CHUNK] = _decode_words(_unpack(chunk, dims, order), dims, order)
    return out


def encode(cells, order: int, dims: int | None = None) -> bytes:
    """Hilbert key of a single grid cell, as big-endian bytes."""
    cells = [int(c) for c in cells]
    dims = len(cells) if dims is None else dims
    if len(cells) != dims:
        raise DomainError(f"expected {dims} cell indices, got {len(cells)}")
    if any(c < 0 or c >= 1 << order for c in cells):
        raise DomainError(f"cell index out of range for order {order}")
    return encode_many(np.array([cells], dtype=np.uint64), dims, order)[0].tobytes()


def decode(key, order: int, dims: int) -> tuple[int, ...]:
    """Inverse of :func:`encode`. ``key`` may be bytes or a non-negative int."""
    nbytes = key_bytes(dims, order)
    if isinstance(key, (bytes, bytearray)):
        if len(key) != nbytes:
            raise DomainError(f"expected a {nbytes}-byte key, got {len(key)}")
        value = int.from_bytes(key, "big")
    else:
        value = int(key)
    if not 0 <= value < 1 << (dims * order):
        raise DomainError(f"key {value} out of range for dims={dims}, order={order}")
    raw = np.frombuffer(value.to_bytes(nbytes, "big"), dtype=np.uint8)[None, :]
    return tuple(int(c) for c in decode_many(raw, dims, order)[0])


def key_to_int(key: bytes) -> int:
    return int.from_bytes(key, "big")
