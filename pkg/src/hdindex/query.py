"""kANN search over an :class:`~hdindex.builder.HDIndex`.

Each tree contributes the ``alpha`` entries whose Hilbert keys are nearest the
query's key; these are cut down with the triangular lower bound and, in the
combined mode, the Ptolemaic one. Survivors from all trees are merged and
re-ranked by exact distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (ConfigurationError, DimensionMismatchError, HDIndexError, QueryParams,
                   ResultSet, distances_to, top_k)

TRIANGULAR = "triangular"
COMBINED = "triangular+ptolemaic"
FILTER_MODES = (TRIANGULAR, COMBINED)


@dataclass
class QueryStats:
    """Per-query counters. ``kappa`` is the size of the merged candidate set."""

    kappa: int = 0
    survivors: list = field(default_factory=list)
    retrieved: list = field(default_factory=list)
    ptolemaic_evaluated: list = field(default_factory=list)
    page_reads: int = 0

    def kappa_within_bounds(self) -> bool:
        """The merged set is at least as large as any tree's survivors and at most their sum."""
        if not self.survivors:
            return self.kappa == 0
        return max(self.survivors) <= self.kappa <= sum(self.survivors)


def triangular_lb(qd, od) -> float | np.ndarray:
    """Best triangular lower bound ``max_i |d(q,R_i) - d(o,R_i)|``.

    ``od`` may be a single vector of ``m`` distances or an ``(n, m)`` batch.
    """
    qd = np.asarray(qd, np.float64)
    od = np.asarray(od, np.float64)
    if od.shape[-1] != qd.shape[-1]:
        raise DimensionMismatchError(f"{qd.shape[-1]} query distances vs {od.shape[-1]} object distances")
    lb = np.abs(od - qd).max(axis=-1)
    return float(lb) if lb.ndim == 0 else lb


def _valid_pairs(pairwise: np.ndarray):
    m = pairwise.shape[0]
    i, j = np.triu_indices(m, 1)
    keep = pairwise[i, j] > 0
    if not keep.any():
        raise HDIndexError("all reference pairs are degenerate (zero distance)")
    return i[keep], j[keep], pairwise[i[keep], j[keep]]


def ptolemaic_lb(qd, od, pairwise) -> float | np.ndarray:
    """Best Ptolemaic lower bound over all reference pairs ``i < j``::

        |d(q,R_i) d(o,R_j) - d(q,R_j) d(o,R_i)| / d(R_i,R_j)

    Pairs of coincident references are skipped.
    """
    qd = np.asarray(qd, np.float64)
    od = np.asarray(od, np.float64)
    pairwise = np.asarray(pairwise, np.float64)
    if qd.shape[-1] < 2:
        raise ConfigurationError("the Ptolemaic bound needs at least two references")
    if od.shape[-1] != qd.shape[-1] or pairwise.shape != (qd.shape[-1],) * 2:
        raise DimensionMismatchError("reference distance shapes disagree")
    i, j, pd = _valid_pairs(pairwise)
    lb = (np.abs(qd[i] * od[..., j] - qd[j] * od[..., i]) / pd).max(axis=-1)
    return float(lb) if lb.ndim == 0 else lb


def _best(ids: np.ndarray, scores: np.ndarray, count: int) -> np.ndarray:
    """Positions of the ``count`` smallest scores, ties to the smaller id."""
    if len(ids) <= count:
        return np.arange(len(ids))
    return np.lexsort((ids, scores))[:count]


def knn(index, q, params: QueryParams | None = None, filter_mode: str = TRIANGULAR,
        stats: QueryStats | None = None) -> ResultSet:
    params = params or QueryParams()
    if filter_mode not in FILTER_MODES:
        raise ConfigurationError(f"filter mode must be one of {FILTER_MODES}, got {filter_mode!r}")
    q = np.asarray(q, np.float64)
    if q.shape != (index.config.dim,):
        raise DimensionMismatchError(f"query has shape {q.shape}, index expects ({index.config.dim},)")
    stats = stats if stats is not None else QueryStats()
    reads_before = index.store.reads
    if index.n == 0:
        return ResultSet()
    p = params.clamped(index.n)
    refs = index.refs
    qd = refs.distances(q[None, :])[0]
    pair_i, pair_j, pair_d = _valid_pairs(refs.pairwise) if filter_mode == COMBINED else (None,) * 3
    union = []
    for tree, key in zip(index.trees, index.keys_for(q[None, :])):
        ids, rd = tree.nearest_alpha_arrays(key[0].tobytes(), p.alpha)
        stats.retrieved.append(len(ids))
        rd = rd.astype(np.float64)
        lb = np.abs(rd - qd).max(axis=1)
        if filter_mode == TRIANGULAR:
            keep = _best(ids, lb, p.gamma)
            stats.ptolemaic_evaluated.append(0)
        else:
            keep = _best(ids, lb, p.beta)
            ids, rd = ids[keep], rd[keep]
            stats.ptolemaic_evaluated.append(len(ids))
            plb = (np.abs(qd[pair_i] * rd[:, pair_j] - qd[pair_j] * rd[:, pair_i]) / pair_d).max(axis=1)
            keep = _best(ids, plb, p.gamma)
        stats.survivors.append(len(keep))
        union.append(ids[keep])
    cand = np.unique(np.concatenate(union)) if union else np.zeros(0, np.int64)
    stats.kappa = len(cand)
    if index.tombstones:
        cand = cand[~np.isin(cand, np.fromiter(index.tombstones, np.int64))]
    # ascending id order keeps descriptor reads sequential
    dists = distances_to(q, index.fetch(cand))
    stats.page_reads = index.store.reads - reads_before
    return top_k(cand, dists, p.k)
