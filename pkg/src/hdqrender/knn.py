"""Exact K-nearest-neighbour index over the posed template and the
geodesically-aware signed KNN coarse distance."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .puppet import PosedCloud

log = logging.getLogger(__name__)

LEAF_SIZE = 16
# extra candidates fetched so distance ties can be re-broken by point index
_TIE_SLACK = 4


class SpatialIndex:
    """Exact kd-tree over world positions (immutable after construction)."""

    def __init__(self, positions):
        positions = np.ascontiguousarray(positions, dtype=float)
        if positions.ndim != 2 or len(positions) == 0:
            raise ConfigError("cannot index an empty point cloud")
        self.positions = positions
        self._tree = cKDTree(positions, leafsize=LEAF_SIZE, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return len(self.positions)

    def query(self, x, k):
        """``(distances, indices)`` of the k nearest points, each ``(N, k)``.

        Ordering is by Euclidean distance, ties by lower point index.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = min(k, len(self))
        kq = min(k + _TIE_SLACK, len(self))
        _, idx = self._tree.query(x, k=kq)
        idx = idx.reshape(len(x), kq)
        return _sorted_neighbours(x, self.positions, idx, k)


def _sorted_neighbours(x, positions, idx, k):
    d = np.linalg.norm(x[:, None, :] - positions[idx], axis=-1)
    order = np.lexsort((idx, d), axis=-1)
    idx = np.take_along_axis(idx, order, axis=-1)[:, :k]
    d = np.take_along_axis(d, order, axis=-1)[:, :k]
    return d, idx


def brute_force_knn(x, positions, k):
    """Reference scan used to validate the index."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    positions = np.asarray(positions, dtype=float)
    k = min(k, len(positions))
    ds, ids = [], []
    for start in range(0, len(x), 32):
        xs = x[start:start + 32]
        idx = np.broadcast_to(np.arange(len(positions)), (len(xs), len(positions)))
        d, i = _sorted_neighbours(xs, positions, idx, k)
        ds.append(d)
        ids.append(i)
    return np.vstack(ds), np.vstack(ids)


def build_index(posed: PosedCloud) -> SpatialIndex:
    if len(posed) == 0:
        raise ConfigError("cannot index an empty point cloud")
    return SpatialIndex(posed.positions)


@dataclass(frozen=True, eq=False)
class KnnResult:
    """Batched GS-KNN output; every array has a leading ``(N, K)``."""

    indices: np.ndarray
    distances: np.ndarray      # signed
    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    canonical: np.ndarray
    replaced: np.ndarray       # True where the geodesic rule substituted the nearest entry

    @property
    def k(self):
        return self.indices.shape[-1]

    def dump(self, row=0):
        """Readable text for one query row."""
        lines = []
        for j in range(self.k):
            lines.append(
                f"k={j} idx={self.indices[row, j]} d={self.distances[row, j]:+.6f} "
                f"v={np.array2string(self.positions[row, j], precision=5)} "
                f"n={np.array2string(self.normals[row, j], precision=4)} "
                f"replaced={bool(self.replaced[row, j])}")
        return "\n".join(lines)


def gs_knn(x, index: SpatialIndex, posed: PosedCloud, k=10, geodesic_threshold=0.1) -> KnnResult:
    """Signed KNN with canonical-space filtering.

    Any neighbour whose canonical position lies farther than
    ``geodesic_threshold`` from the nearest neighbour's canonical position
    takes over the nearest neighbour's payload.  Euclidean order is kept.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if k > len(index):
        log.warning("cloud has %d points, clamping K=%d", len(index), k)
    dist, local = index.query(x, k)
    v = posed.positions[local]
    n = posed.normals[local]
    src = posed.indices[local]
    can = posed.template.positions[src]
    w = posed.template.weights[src]

    # sign(0) counts as outside so tangential neighbours don't zero the distance
    side = np.einsum("nki,nki->nk", x[:, None, :] - v, n)
    d = np.where(side < 0, -dist, dist)

    far = np.linalg.norm(can - can[:, :1], axis=-1) > geodesic_threshold
    if np.any(far):
        local = np.where(far, local[:, :1], local)
        d = np.where(far, d[:, :1], d)
        far3 = far[..., None]
        v = np.where(far3, v[:, :1], v)
        n = np.where(far3, n[:, :1], n)
        can = np.where(far3, can[:, :1], can)
        w = np.where(far3, w[:, :1], w)
    return KnnResult(local, d, v, n, w, can, far)


def coarse_distance(knn: KnnResult):
    return knn.distances.mean(axis=-1)
