"""Reference object (pivot) selection.

Three strategies are offered: uniform random sampling, sparse spatial
selection (SSS) and its dynamic variant (SSS-Dyn), which keeps scanning after
``m`` pivots are found and swaps in newcomers that improve the triangular
lower bound over a fixed sample of object pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, Dataset, DatasetTooSmallError, distances_to

logger = logging.getLogger(__name__)

DMAX_HOPS = 20
RELAX_FACTOR = 0.9
DYN_PAIRS = 1000


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    ids: np.ndarray          # (m,) dataset ids
    coords: np.ndarray       # (m, dim)
    pairwise: np.ndarray     # (m, m)
    dmax_est: float
    f: float

    @property
    def m(self) -> int:
        return len(self.ids)

    def distances(self, points) -> np.ndarray:
        """``(n, m)`` matrix of distances from each row of ``points`` to every reference."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((points.shape[0], self.m))
        for j in range(self.m):
            out[:, j] = distances_to(self.coords[j], points)
        return out


def pairwise_matrix(coords: np.ndarray) -> np.ndarray:
    m = len(coords)
    out = np.zeros((m, m))
    for i in range(m):
        out[i] = distances_to(coords[i], coords)
    np.fill_diagonal(out, 0.0)
    return (out + out.T) / 2


def _make(data: Dataset, positions, dmax: float, f: float) -> ReferenceSet:
    positions = np.asarray(positions, dtype=np.int64)
    coords = data.coords[positions].copy()
    return ReferenceSet(data.ids[positions].copy(), coords, pairwise_matrix(coords), float(dmax), float(f))


def reference_set_from_ids(data: Dataset, ids, dmax: float = 0.0, f: float = 0.0) -> ReferenceSet:
    return _make(data, [data.position(i) for i in ids], dmax, f)


def estimate_dmax(data: Dataset, max_iters: int = DMAX_HOPS, seed=None) -> float:
    """Estimate the largest pairwise distance by farthest-neighbour hopping.

    Starts at a random object and repeatedly jumps to the farthest object from
    the current one, stopping when the hop distance no longer grows.
    """
    if data.n < 2:
        raise DatasetTooSmallError("need at least two objects to estimate d_max")
    rng = np.random.default_rng(seed)
    current = int(rng.integers(data.n))
    best = 0.0
    for _ in range(max(1, max_iters)):
        d = distances_to(data.coords[current], data.coords)
        far = int(np.argmax(d))
        if d[far] <= best:
            break
        best = float(d[far])
        current = far
    return best


def _check_m(data: Dataset, m: int) -> None:
    if m < 1:
        raise ConfigurationError("need at least one reference object")
    if m > data.n:
        raise DatasetTooSmallError(f"cannot pick {m} reference objects from {data.n} points")


def _sss_positions(data: Dataset, m: int, f: float, dmax: float, rng) -> tuple[list[int], int, float]:
    """Run the SSS scan. Returns chosen positions, the scan position where it
    stopped, and the (possibly relaxed) fraction used."""
    chosen = [int(rng.integers(data.n))]
    chosen_coords = [data.coords[chosen[0]]]
    frac = f
    stop = 0
    while len(chosen) < m:
        found = False
        for pos in range(data.n):
            if pos in chosen:
                continue
            d = distances_to(data.coords[pos], np.array(chosen_coords))
            if np.all(d > frac * dmax):
                chosen.append(pos)
                chosen_coords.append(data.coords[pos])
                stop = pos + 1
                if len(chosen) == m:
                    found = True
                    break
        if not found and len(chosen) < m:
            if frac * dmax == 0.0:
                raise DatasetTooSmallError(f"fewer than {m} distinct points in the dataset")
            frac *= RELAX_FACTOR
            logger.info("SSS relaxed spread fraction to %.4f", frac)
            if frac < 1e-12:
                frac = 0.0
    return chosen, stop, frac


def select_sss(data: Dataset, m: int = 10, f: float = 0.3, dmax: float | None = None, seed=None) -> ReferenceSet:
    """Sparse spatial selection.

    The first pivot is random; the dataset is then scanned in order, adding
    every object farther than ``f * dmax`` from all pivots chosen so far.
    If the scan runs out before ``m`` pivots are found, ``f`` is multiplied
    by 0.9 and the scan repeats.
    """
    if not 0 < f < 1:
        raise ConfigurationError(f"spread fraction must be in (0, 1), got {f}")
    _check_m(data, m)
    rng = np.random.default_rng(seed)
    if dmax is None:
        dmax = estimate_dmax(data, seed=rng.integers(2**63))
    chosen, _, frac = _sss_positions(data, m, f, dmax, rng)
    return _make(data, chosen, dmax, frac)


def _pair_bound_sum(ref_to_a: np.ndarray, ref_to_b: np.ndarray) -> float:
    """Sum over sampled pairs of the best triangular bound from the given pivots."""
    if ref_to_a.shape[0] == 0:
        return 0.0
    return float(np.abs(ref_to_a - ref_to_b).max(axis=0).sum())


def sample_pairs(n: int, count: int, rng) -> np.ndarray:
    a = rng.integers(n, size=count)
    b = rng.integers(n - 1, size=count)
    b = np.where(b >= a, b + 1, b)
    return np.stack([a, b], axis=1)


def select_sss_dyn(data: Dataset, m: int = 10, f: float = 0.3, dmax: float | None = None,
                   pair_budget: int = DYN_PAIRS, seed=None, pairs=None) -> ReferenceSet:
    """SSS followed by victim replacement.

    The quality of a pivot set is the sum, over a fixed sample of object
    pairs, of the largest triangular lower bound any pivot gives for that
    pair. Once ``m`` pivots exist, every later object that passes the spread
    test is tried against the victim, i.e. the pivot whose removal costs the
    least quality; it replaces the victim when that raises the set quality.
    ``pairs`` may pin the sampled pairs as dataset positions.
    """
    if not 0 < f < 1:
        raise ConfigurationError(f"spread fraction must be in (0, 1), got {f}")
    if pair_budget < 1:
        raise ConfigurationError("pair_budget must be positive")
    _check_m(data, m)
    rng = np.random.default_rng(seed)
    if dmax is None:
        dmax = estimate_dmax(data, seed=rng.integers(2**63))
    chosen, stop, frac = _sss_positions(data, m, f, dmax, rng)
    if data.n < 2:
        return _make(data, chosen, dmax, frac)
    if pairs is None:
        pairs = sample_pairs(data.n, pair_budget, rng)
    pairs = np.asarray(pairs, dtype=np.int64)
    pa, pb = data.coords[pairs[:, 0]], data.coords[pairs[:, 1]]

    def profile(pos):
        c = data.coords[pos]
        return distances_to(c, pa), distances_to(c, pb)

    prof_a, prof_b = map(np.array, zip(*(profile(p) for p in chosen)))
    quality = _pair_bound_sum(prof_a, prof_b)
    for pos in range(stop, data.n):
        if pos in chosen:
            continue
        d = distances_to(data.coords[pos], data.coords[chosen])
        if not np.all(d > frac * dmax):
            continue
        without = [_pair_bound_sum(np.delete(prof_a, i, 0), np.delete(prof_b, i, 0)) for i in range(m)]
        victim = int(np.argmax(without))
        new_a, new_b = profile(pos)
        cand_a, cand_b = prof_a.copy(), prof_b.copy()
        cand_a[victim], cand_b[victim] = new_a, new_b
        cand_quality = _pair_bound_sum(cand_a, cand_b)
        if cand_quality > quality:
            chosen[victim] = pos
            prof_a, prof_b, quality = cand_a, cand_b, cand_quality
    return _make(data, chosen, dmax, frac)


def select_random(data: Dataset, m: int = 10, seed=None) -> ReferenceSet:
    _check_m(data, m)
    rng = np.random.default_rng(seed)
    positions = rng.choice(data.n, size=m, replace=False)
    return _make(data, positions, 0.0, 0.0)


def select(data: Dataset, method: str, m: int, f: float, seed=None) -> ReferenceSet:
    if method == "sss":
        return select_sss(data, m, f, seed=seed)
    if method == "sss-dyn":
        return select_sss_dyn(data, m, f, seed=seed)
    if method == "random":
        return select_random(data, m, seed=seed)
    raise ConfigurationError(f"unknown reference selection method {method!r}")
