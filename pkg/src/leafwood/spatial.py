"""Exact k-nearest-neighbour search.

A k-d tree proposes a few more candidates than requested. Their distances
are recomputed with one fixed formula, ordered by ``(distance, index)``,
and each row is checked for exactness. A row fails the check when the k-th
distance is not strictly inside the candidate radius, meaning a tie or a
near-tie may cross the candidate boundary. Those rows are redone with a
radius query, so every answer is exact and ties always go to the smaller
point index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, EmptyInputError

# Extra candidates fetched beyond k + 1 to make boundary ties rare.
_PAD = 8
# Relative slack covering rounding differences between the tree's distance
# arithmetic and ours.
_SLACK = 1e-12
CHUNK = 4096


@dataclass(frozen=True)
class NeighborSet:
    center_index: int
    neighbor_indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self):
        return self.neighbor_indices.shape[0]


class SpatialIndex:
    """Immutable k-d tree over a point cloud; safe for concurrent queries."""

    def __init__(self, cloud):
        points = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=float)
        if points.shape[0] < 1:
            raise EmptyInputError("cannot index an empty cloud")
        self.points = points.view()
        self.points.setflags(write=False)
        self.tree = cKDTree(points, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return self.points.shape[0]


def build_index(cloud) -> SpatialIndex:
    return SpatialIndex(cloud)


def _sq_distances(points, centers, cand):
    """Squared distances summed x, y, z in that order (one fixed formula)."""
    diff = points[cand] - points[centers][:, None, :]
    sq = diff * diff
    return sq[..., 0] + sq[..., 1] + sq[..., 2]


def _exact_rows(index, centers, k, d, i):
    """Sort candidates by (squared distance, index); rows plus an exactness mask."""
    n = len(index)
    is_self = i == centers[:, None]
    d = np.where(is_self, np.inf, d)
    order = np.lexsort((i, d), axis=-1)
    d = np.take_along_axis(d, order, axis=-1)
    i = np.take_along_axis(i, order, axis=-1)
    if i.shape[1] >= n:
        exact = np.ones(len(centers), dtype=bool)
    else:
        # Every point outside the candidate set lies at least as far as the
        # farthest candidate (largest finite distance in the row).
        finite = np.where(np.isfinite(d), d, -np.inf)
        bound = finite.max(axis=1)
        exact = d[:, k - 1] < bound * (1.0 - _SLACK)
    return i[:, :k], d[:, :k], exact


def _fallback_row(index, c, k, radius):
    pts = index.points
    r = max(radius * (1.0 + 1e-9), 1e-300)
    cand = np.asarray(index.tree.query_ball_point(pts[c], r), dtype=np.int64)
    cand = cand[cand != c]
    d2 = _sq_distances(pts, np.array([c]), cand[None, :])[0]
    order = np.lexsort((cand, d2))[:k]
    return cand[order], d2[order]


def _knn_chunk(index, centers, k):
    n = len(index)
    q = min(n, k + 1 + _PAD)
    _, cand = index.tree.query(index.points[centers], k=q)
    cand = np.asarray(cand, dtype=np.int64).reshape(len(centers), q)
    d2 = _sq_distances(index.points, centers, cand)
    nbr, d2, exact = _exact_rows(index, centers, k, d2, cand)
    for row in np.flatnonzero(~exact):
        nbr[row], d2[row] = _fallback_row(index, int(centers[row]), k, np.sqrt(d2[row, k - 1]))
    return nbr, np.sqrt(d2)


def _check_k(index, k):
    n = len(index)
    if k < 1 or k > n - 1:
        raise ConfigError(f"k={k} invalid for a cloud of {n} points (need 1 <= k <= N-1)")


def knn_many(index: SpatialIndex, centers, k: int, workers: int = 1):
    """Exact kNN for many centres.

    Returns
    -------
    (indices, distances) : arrays of shape (len(centers), k)
        Neighbours exclude the centre itself, ascending by distance, ties by
        ascending point index. Results do not depend on ``workers``: work is
        split into fixed-size chunks written to their own output slots.
    """
    _check_k(index, k)
    centers = np.asarray(centers, dtype=np.int64).ravel()
    if centers.size and (centers.min() < 0 or centers.max() >= len(index)):
        raise IndexError("center index out of range")
    m = centers.shape[0]
    out_i = np.empty((m, k), dtype=np.int64)
    out_d = np.empty((m, k), dtype=np.float64)

    def run(start):
        sl = slice(start, min(start + CHUNK, m))
        out_i[sl], out_d[sl] = _knn_chunk(index, centers[sl], k)

    starts = range(0, m, CHUNK)
    if workers > 1 and m > CHUNK:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out_i, out_d


def knn(index: SpatialIndex, center_index: int, k: int) -> NeighborSet:
    if not 0 <= center_index < len(index):
        raise IndexError(f"center index {center_index} out of range")
    nbr, dist = knn_many(index, [center_index], k)
    return NeighborSet(int(center_index), nbr[0], dist[0])


def radius_members(index: SpatialIndex, center_index: int, radius: float) -> np.ndarray:
    """Indices of points within ``radius`` of a point (centre included), ascending."""
    found = index.tree.query_ball_point(index.points[center_index], radius)
    return np.unique(np.asarray(found, dtype=np.int64))
