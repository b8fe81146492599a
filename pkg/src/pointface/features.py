"""Per-point normals and surface-variation curvature from local covariance."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .geometry import PointCloud, build_index

DEFAULT_K = 30
DEFAULT_VIEWPOINT = (0.0, 0.0, 1e6)

# relative eigenvalue floor below which a neighbourhood counts as rank-deficient
_RANK_TOL = 1e-12


def _neighbourhood_eigen(positions: np.ndarray, k: int):
    if k < 3:
        raise ValueError("need ≥3 neighbors for a plane fit")
    if k > len(positions):
        raise ValueError("k exceeds cloud size")
    index = build_index(positions)
    nbr, _ = index.k_nearest_many(positions, k)
    local = positions[nbr]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / k
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    scale = evals[:, 2]
    # rank < 2: the two largest spread directions do not span a plane
    degenerate = (scale <= 0.0) | (evals[:, 1] <= _RANK_TOL * np.maximum(scale, 1e-300))
    return evals, evecs, degenerate


def _normals_from(positions, evecs, degenerate, viewpoint):
    normals = evecs[:, :, 0].copy()
    to_view = np.asarray(viewpoint, dtype=np.float64) - positions
    flip = (normals * to_view).sum(axis=1) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[degenerate] = (0.0, 0.0, 1.0)
    return normals


def _curvature_from(evals, degenerate):
    total = evals.sum(axis=1)
    curv = np.divide(evals[:, 0], total, out=np.zeros_like(total), where=total > 0)
    curv = np.clip(curv, 0.0, 1.0 / 3.0)
    curv[degenerate] = 0.0
    return curv


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K, viewpoint=DEFAULT_VIEWPOINT) -> PointCloud:
    """Smallest-eigenvector normals oriented toward ``viewpoint``."""
    _, evecs, degenerate = _neighbourhood_eigen(cloud.positions, k)
    normals = _normals_from(cloud.positions, evecs, degenerate, viewpoint)
    return replace(cloud, normals=normals, degenerate=degenerate)


def estimate_curvature(cloud: PointCloud, k: int = DEFAULT_K) -> PointCloud:
    """Surface variation ``l0 / (l0 + l1 + l2)`` per point, in [0, 1/3]."""
    evals, _, degenerate = _neighbourhood_eigen(cloud.positions, k)
    return replace(cloud, curvature=_curvature_from(evals, degenerate), degenerate=degenerate)


def compute_features(cloud: PointCloud, k: int = DEFAULT_K, viewpoint=DEFAULT_VIEWPOINT) -> PointCloud:
    """Normals and curvature from a single neighbourhood pass."""
    evals, evecs, degenerate = _neighbourhood_eigen(cloud.positions, k)
    return replace(
        cloud,
        normals=_normals_from(cloud.positions, evecs, degenerate, viewpoint),
        curvature=_curvature_from(evals, degenerate),
        degenerate=degenerate,
    )
