"""Farthest point sampling and its curvature-aware variant.

Both samplers share one greedy loop. At every step each remaining candidate
is scored by its aggregated distance to the already-selected points
(nearest selected point by default, or the sum over all of them), and for
the curvature-aware sampler that score is multiplied by the candidate's own
curvature raised to ``lam``. The highest score wins; ties go to the lower
index. ``lam = 0`` multiplies by exactly 1.0, so the two samplers agree bit
for bit.

Candidates can be restricted to a ball of radius ``region_radius`` around
the nose tip. Filtered points are never selected but stay in the cloud, so
they still show up as grouping neighbours downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .geometry import PointCloud, point_distances

Aggregation = Literal["min_distance", "sum_distance"]
StartRule = Literal["index_zero", "nose_tip"]

DEFAULT_LAMBDA = 0.1
DEFAULT_REGION_RADIUS = 0.7


@dataclass(frozen=True)
class SamplingConfig:
    num_samples: int
    lam: float = DEFAULT_LAMBDA
    region_radius: Optional[float] = DEFAULT_REGION_RADIUS  # None means unbounded
    aggregation: Aggregation = "min_distance"
    start_rule: StartRule = "nose_tip"

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.region_radius is not None and not self.region_radius > 0:
            raise ValueError("region radius must be positive")
        if self.aggregation not in ("min_distance", "sum_distance"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.start_rule not in ("index_zero", "nose_tip"):
            raise ValueError(f"unknown start rule {self.start_rule!r}")


@dataclass
class SampleResult:
    selected: np.ndarray
    candidate_mask: np.ndarray


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Move the nose tip (centroid if unknown) to the origin and scale the farthest point to radius 1."""
    centered = cloud.positions - cloud.nose_tip
    radius = np.sqrt((centered * centered).sum(axis=1)).max()
    if radius > 0:
        centered = centered / radius
    return cloud.with_positions(centered)


def region_filter(cloud: PointCloud | np.ndarray, nose_tip, r: Optional[float]) -> np.ndarray:
    """Candidate mask: points within ``r`` of the nose tip. ``r=None`` keeps everything."""
    positions = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if r is None or np.isinf(r):
        return np.ones(len(positions), dtype=bool)
    if not r > 0:
        raise ValueError("region radius must be positive")
    mask = point_distances(positions, nose_tip) <= r
    if not mask.any():
        raise ValueError("region radius excludes every point")
    return mask


def _start_index(positions, mask, nose_tip, rule) -> int:
    cand = np.flatnonzero(mask)
    if rule == "index_zero":
        return int(cand[0])
    dist = point_distances(positions[cand], nose_tip)
    # argmin returns the first minimum, i.e. the lowest index on ties
    return int(cand[np.argmin(dist)])


def greedy_sample(
    positions: np.ndarray,
    num_samples: int,
    candidate_mask: np.ndarray,
    weights: Optional[np.ndarray] = None,
    aggregation: Aggregation = "min_distance",
    start: int = 0,
) -> np.ndarray:
    """Weighted farthest-point selection over the masked candidates."""
    n_cand = int(candidate_mask.sum())
    if num_samples > n_cand:
        raise ValueError(f"num_samples {num_samples} exceeds the {n_cand} sampling candidates")
    if not candidate_mask[start]:
        raise ValueError("start point is not a candidate")
    n = len(positions)
    if weights is None:
        weights = np.ones(n)
    if aggregation == "min_distance":
        agg = np.full(n, np.inf)
        combine = np.minimum
    else:
        agg = np.zeros(n)
        combine = np.add
    available = candidate_mask.copy()
    selected = np.empty(num_samples, dtype=np.intp)
    selected[0] = last = start
    available[last] = False
    for j in range(1, num_samples):
        agg = combine(agg, point_distances(positions, positions[last]))
        score = agg * weights
        score[~available] = -np.inf
        last = int(np.argmax(score))
        selected[j] = last
        available[last] = False
    return selected


def _run(cloud: PointCloud, config: SamplingConfig, lam: float, nose_tip=None) -> SampleResult:
    nose_tip = cloud.nose_tip if nose_tip is None else np.asarray(nose_tip, dtype=np.float64)
    mask = region_filter(cloud, nose_tip, config.region_radius)
    if lam != 0 and cloud.curvature is None:
        raise ValueError("run estimate_curvature first")
    weights = None if lam == 0 else np.power(cloud.curvature, lam)
    start = _start_index(cloud.positions, mask, nose_tip, config.start_rule)
    selected = greedy_sample(cloud.positions, config.num_samples, mask, weights, config.aggregation, start)
    return SampleResult(selected=selected, candidate_mask=mask)


def farthest_point_sampling(cloud: PointCloud, config: SamplingConfig, nose_tip=None) -> SampleResult:
    """Plain FPS; ``config.lam`` is ignored.

    ``nose_tip`` overrides the cloud's own reference point for the region
    filter and the ``nose_tip`` start rule.
    """
    return _run(cloud, config, 0.0, nose_tip)


def curvature_aware_sampling(cloud: PointCloud, config: SamplingConfig, nose_tip=None) -> SampleResult:
    if cloud.curvature is None:
        raise ValueError("run estimate_curvature first")
    return _run(cloud, config, config.lam, nose_tip)


def sample(cloud: PointCloud, config: SamplingConfig, sampler: Literal["fps", "cps"] = "cps",
           nose_tip=None) -> SampleResult:
    if sampler == "fps":
        return farthest_point_sampling(cloud, config, nose_tip)
    if sampler == "cps":
        return curvature_aware_sampling(cloud, config, nose_tip)
    raise ValueError(f"unknown sampler {sampler!r}")
