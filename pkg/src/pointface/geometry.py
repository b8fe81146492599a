"""Point cloud containers and exact spatial search.

All spatial queries are Euclidean on positions only. Ties are always broken
by the lower point index so every downstream sampler is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree


class Point7(NamedTuple):
    x: float
    y: float
    z: float
    nx: float
    ny: float
    nz: float
    c: float


@dataclass
class PointCloud:
    """A face scan as N points with optional normals and curvature.

    ``normals`` and ``curvature`` are ``None`` until the features module
    fills them in. ``degenerate`` marks points whose neighbourhood was too
    thin for a plane fit.
    """

    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    curvature: Optional[np.ndarray] = None
    identity: Optional[int] = None
    expression: Optional[int] = None
    nose_tip_index: Optional[int] = None
    degenerate: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if len(self.positions) == 0:
            raise ValueError("empty cloud")
        n = len(self.positions)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if self.normals.shape != (n, 3):
                raise ValueError("normals shape does not match positions")
        if self.curvature is not None:
            self.curvature = np.ascontiguousarray(self.curvature, dtype=np.float64)
            if self.curvature.shape != (n,):
                raise ValueError("curvature shape does not match positions")
        if self.nose_tip_index is not None:
            self.nose_tip_index = int(self.nose_tip_index)
            if not 0 <= self.nose_tip_index < n:
                raise ValueError(f"nose_tip_index {self.nose_tip_index} out of range for {n} points")
        for name in ("identity", "expression"):
            value = getattr(self, name)
            if value is not None:
                value = int(value)
                if value < 0:
                    raise ValueError(f"{name} label must be non-negative")
                setattr(self, name, value)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_features(self) -> bool:
        return self.normals is not None and self.curvature is not None

    @property
    def nose_tip(self) -> np.ndarray:
        """Nose tip position, or the centroid when no tip is recorded."""
        if self.nose_tip_index is None:
            return self.positions.mean(axis=0)
        return self.positions[self.nose_tip_index]

    def features(self) -> np.ndarray:
        """The (N, 7) array of ``x y z nx ny nz c``."""
        if not self.has_features:
            raise ValueError("cloud has no normals/curvature; run estimate_normals and estimate_curvature first")
        return np.concatenate([self.positions, self.normals, self.curvature[:, None]], axis=1)

    def point(self, i: int) -> Point7:
        n = self.normals[i] if self.normals is not None else (0.0, 0.0, 0.0)
        c = self.curvature[i] if self.curvature is not None else 0.0
        return Point7(*map(float, self.positions[i]), *map(float, n), float(c))

    @classmethod
    def from_points(cls, points: Sequence[Point7], **labels) -> "PointCloud":
        arr = np.asarray(points, dtype=np.float64).reshape(-1, 7)
        return cls(arr[:, :3], normals=arr[:, 3:6], curvature=arr[:, 6], **labels)

    def subset(self, indices) -> "PointCloud":
        """Cloud restricted to ``indices`` (order kept); the nose tip is remapped when present."""
        indices = np.asarray(indices, dtype=np.intp)
        tip = None
        if self.nose_tip_index is not None:
            hits = np.flatnonzero(indices == self.nose_tip_index)
            tip = int(hits[0]) if len(hits) else None
        return PointCloud(
            self.positions[indices],
            normals=None if self.normals is None else self.normals[indices],
            curvature=None if self.curvature is None else self.curvature[indices],
            identity=self.identity,
            expression=self.expression,
            nose_tip_index=tip,
            degenerate=None if self.degenerate is None else self.degenerate[indices],
        )

    def with_positions(self, positions: np.ndarray) -> "PointCloud":
        return replace(self, positions=positions)


def point_distances(positions: np.ndarray, query) -> np.ndarray:
    """Euclidean distance from every row of ``positions`` to ``query``.

    Every exact-distance computation in the package goes through this helper
    so brute-force references reproduce the same bits.
    """
    diff = positions - np.asarray(query, dtype=np.float64)
    return np.sqrt((diff * diff).sum(axis=1))


def _order(dist: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # ascending distance, lower index on ties
    return idx[np.lexsort((idx, dist))]


class SpatialIndex:
    """Immutable k-d tree over the positions of one cloud.

    Candidate sets come from the tree; final distances and ordering are
    recomputed exactly so the answer is identical to a brute-force scan.
    """

    def __init__(self, positions: np.ndarray):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) == 0:
            raise ValueError("empty cloud")
        self.positions = positions
        self.positions.setflags(write=False)
        self._tree = cKDTree(positions, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.positions)

    def _within(self, center: np.ndarray, radius: float) -> np.ndarray:
        # inflate so rounding in the tree never drops a boundary point
        r = radius * (1.0 + 1e-9) + 1e-300
        return np.asarray(self._tree.query_ball_point(center, r), dtype=np.intp)

    def k_nearest(self, query, k: int) -> list[tuple[int, float]]:
        query = np.asarray(query, dtype=np.float64).reshape(3)
        if k < 1:
            raise ValueError("k must be positive")
        if k > len(self):
            raise ValueError("k exceeds cloud size")
        kth, _ = self._tree.query(query, k=[k])
        cand = self._within(query, float(kth[0]))
        dist = point_distances(self.positions[cand], query)
        order = np.lexsort((cand, dist))[:k]
        return [(int(cand[i]), float(dist[i])) for i in order]

    def k_nearest_many(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched k-NN: ``(indices, distances)`` each of shape (Q, k)."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if k > len(self):
            raise ValueError("k exceeds cloud size")
        # over-fetch a little, then fix up rows where ties straddle the cut
        extra = min(len(self), k + 4)
        _, idx = self._tree.query(queries, k=extra)
        idx = np.asarray(idx).reshape(len(queries), extra)
        diff = self.positions[idx] - queries[:, None, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        order = np.lexsort((idx, dist), axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        out_i = idx[:, :k].copy()
        out_d = dist[:, :k].copy()
        if extra > k:
            risky = np.flatnonzero(dist[:, k] <= dist[:, k - 1] * (1.0 + 1e-9))
        else:
            risky = np.arange(0)
        for q in risky:
            pairs = self.k_nearest(queries[q], k)
            out_i[q] = [p[0] for p in pairs]
            out_d[q] = [p[1] for p in pairs]
        return out_i, out_d

    def ball_query(self, center, radius: float, max_count: int) -> list[int]:
        center = np.asarray(center, dtype=np.float64).reshape(3)
        if radius <= 0:
            raise ValueError("radius must be positive")
        if max_count < 1:
            raise ValueError("max_count must be positive")
        cand = self._within(center, radius)
        dist = point_distances(self.positions[cand], center)
        keep = dist <= radius
        cand, dist = cand[keep], dist[keep]
        if len(cand) == 0:
            return [self.k_nearest(center, 1)[0][0]]
        return [int(i) for i in _order(dist, cand)[:max_count]]

    def ball_group(self, centers: np.ndarray, radius: float, group_size: int) -> np.ndarray:
        """Fixed-size groups for set abstraction, shape (M, group_size).

        Each row is the ball query result padded by repeating its nearest
        member, the usual convention for ball grouping.
        """
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        out = np.empty((len(centers), group_size), dtype=np.intp)
        for row, c in enumerate(centers):
            members = self.ball_query(c, radius, group_size)
            out[row, : len(members)] = members
            out[row, len(members):] = members[0]
        return out


def build_index(cloud: PointCloud | np.ndarray) -> SpatialIndex:
    positions = cloud.positions if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(positions)


def k_nearest(index: SpatialIndex, query, k: int) -> list[tuple[int, float]]:
    return index.k_nearest(query, k)


def ball_query(index: SpatialIndex, center, radius: float, max_count: int) -> list[int]:
    return index.ball_query(center, radius, max_count)
