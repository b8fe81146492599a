"""Hierarchical set-abstraction embedding network.

Stages before the last sample centroids (FPS or CPS), group ball
neighbourhoods around them, run a shared per-point MLP on
``(neighbour position - centroid position, neighbour features)`` and max-pool
each group. The last stage treats every remaining point as one group around
the nose tip. A dense head maps the global feature to a unit-norm embedding.

Sampling and grouping depend only on geometry, never on weights, so they are
computed once per cloud (:func:`prepare_cloud`) and reused every epoch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..geometry import PointCloud, build_index
from ..sampling import SamplingConfig, normalize_cloud, sample
from . import autodiff as ad

EMBEDDING_DIM = 512
INPUT_FEATURES = 7
ORIGIN = np.zeros(3)


@dataclass(frozen=True)
class SetAbstractionConfig:
    num_centroids: Optional[int]  # None: global stage over all remaining points
    ball_radius: float
    max_group_size: int
    mlp_widths: tuple
    sampler: str = "cps"
    sampling: Optional[SamplingConfig] = None
    use_batchnorm: bool = True

    def __post_init__(self):
        if not self.mlp_widths:
            raise ValueError("mlp_widths must be non-empty")
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        if self.num_centroids is not None and self.sampling is None:
            object.__setattr__(self, "sampling", SamplingConfig(num_samples=self.num_centroids))
        if self.sampler not in ("fps", "cps"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    @property
    def is_global(self) -> bool:
        return self.num_centroids is None


@dataclass(frozen=True)
class NetworkConfig:
    stages: tuple
    embedding_dim: int = EMBEDDING_DIM
    num_points: int = 4096
    resample_seed: int = 0

    def __post_init__(self):
        if len(self.stages) < 1 or not self.stages[-1].is_global:
            raise ValueError("the last set-abstraction stage must be global")
        if any(s.is_global for s in self.stages[:-1]):
            raise ValueError("only the last stage may be global")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        stages = []
        for s in d["stages"]:
            s = dict(s)
            if s.get("sampling") is not None:
                s["sampling"] = SamplingConfig(**s["sampling"])
            s["mlp_widths"] = tuple(s["mlp_widths"])
            stages.append(SetAbstractionConfig(**s))
        return cls(stages=tuple(stages), **{k: v for k, v in d.items() if k != "stages"})


ARCHITECTURES = {
    # centroids, radius, group size, widths per local stage; widths of the global stage
    "desk": ([(512, 0.2, 32, (64, 64, 128)), (128, 0.4, 64, (128, 128, 256))], (256, 512, 1024)),
    "compact": ([(128, 0.2, 32, (32, 32, 64)), (32, 0.4, 32, (64, 64, 128))], (128, 256, 512)),
}


def network_config(arch: str = "desk", sampler: str = "cps", lam: float = 0.1, region_radius: Optional[float] = 0.7,
                   aggregation: str = "min_distance", start_rule: str = "nose_tip", num_points: int = 4096,
                   embedding_dim: int = EMBEDDING_DIM, resample_seed: int = 0) -> NetworkConfig:
    """Three-stage network with one sampling policy shared by the local stages."""
    local, global_widths = ARCHITECTURES[arch]
    stages = []
    for centroids, radius, group, widths in local:
        sampling = SamplingConfig(centroids, lam=lam, region_radius=region_radius,
                                  aggregation=aggregation, start_rule=start_rule)
        stages.append(SetAbstractionConfig(centroids, radius, group, widths, sampler, sampling))
    stages.append(SetAbstractionConfig(None, 0.0, 0, global_widths, sampler))
    return NetworkConfig(tuple(stages), embedding_dim, num_points, resample_seed)


@dataclass
class FaceNetParams:
    config: NetworkConfig
    weights: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    classifier: Optional[np.ndarray] = None  # (embedding_dim, C), unit columns
    class_labels: Optional[np.ndarray] = None  # identity label of each classifier column

    def copy(self) -> "FaceNetParams":
        return replace(
            self,
            weights={k: v.copy() for k, v in self.weights.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            classifier=None if self.classifier is None else self.classifier.copy(),
            class_labels=None if self.class_labels is None else self.class_labels.copy(),
        )


def _layer_shapes(config: NetworkConfig):
    width = INPUT_FEATURES
    for s, stage in enumerate(config.stages):
        fan_in = width + 3
        for l, out in enumerate(stage.mlp_widths):
            yield f"sa{s}.{l}", fan_in, out, stage.use_batchnorm
            fan_in = out
        width = stage.mlp_widths[-1]
    yield "head", width, config.embedding_dim, False


def init_params(config: NetworkConfig, seed: int = 0, num_classes: Optional[int] = None) -> FaceNetParams:
    rng = np.random.default_rng(seed)
    weights, buffers = {}, {}
    for name, fan_in, out, bn in _layer_shapes(config):
        weights[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, out))
        if not bn:
            weights[f"{name}.b"] = np.zeros(out)
        else:
            weights[f"{name}.gamma"] = np.ones(out)
            weights[f"{name}.beta"] = np.zeros(out)
            buffers[f"{name}.mean"] = np.zeros(out)
            buffers[f"{name}.var"] = np.ones(out)
    params = FaceNetParams(config, weights, buffers)
    if num_classes is not None:
        params.classifier = init_classifier(config.embedding_dim, num_classes, rng)
        params.class_labels = np.arange(num_classes)
    return params


def init_classifier(dim: int, num_classes: int, rng) -> np.ndarray:
    w = rng.standard_normal((dim, num_classes))
    return w / np.linalg.norm(w, axis=0, keepdims=True)


def resample_cloud(cloud: PointCloud, num_points: int, seed: int = 0) -> PointCloud:
    """Deterministically bring a cloud to exactly ``num_points`` points.

    Larger clouds are subsampled without replacement (the nose tip is always
    kept, order preserved); smaller ones are padded with repeated points.
    """
    n = len(cloud)
    if n == num_points:
        return cloud
    rng = np.random.default_rng(seed)
    if n > num_points:
        pool = np.arange(n)
        if cloud.nose_tip_index is not None:
            pool = np.delete(pool, cloud.nose_tip_index)
            keep = rng.choice(pool, num_points - 1, replace=False)
            keep = np.sort(np.append(keep, cloud.nose_tip_index))
        else:
            keep = np.sort(rng.choice(pool, num_points, replace=False))
        return cloud.subset(keep)
    extra = rng.choice(n, num_points - n, replace=True)
    return cloud.subset(np.concatenate([np.arange(n), extra]))


@dataclass
class PreparedCloud:
    """Network-ready cloud: normalised 7-dim features plus the cached sampling/grouping plan."""

    positions: np.ndarray
    features: np.ndarray
    centroids: list  # per local stage, indices into the previous level
    groups: list  # per local stage, (M, K) indices into the previous level
    identity: Optional[int] = None
    expression: Optional[int] = None


def plan_stages(positions: np.ndarray, curvature: np.ndarray, stages: Sequence[SetAbstractionConfig]):
    """Centroid and group indices for every local stage of a normalised cloud."""
    centroids, groups = [], []
    level_pos, level_curv = positions, curvature
    for stage in stages:
        if stage.is_global:
            break
        level = PointCloud(level_pos, curvature=level_curv)
        chosen = sample(level, stage.sampling, stage.sampler, nose_tip=ORIGIN).selected
        index = build_index(level_pos)
        centroids.append(chosen)
        groups.append(index.ball_group(level_pos[chosen], stage.ball_radius, stage.max_group_size))
        level_pos, level_curv = level_pos[chosen], level_curv[chosen]
    return centroids, groups


def prepare_cloud(cloud: PointCloud, config: NetworkConfig) -> PreparedCloud:
    if not cloud.has_features:
        raise ValueError("cloud has no normals/curvature; run estimate_normals and estimate_curvature first")
    cloud = normalize_cloud(resample_cloud(cloud, config.num_points, config.resample_seed))
    features = cloud.features()
    centroids, groups = plan_stages(cloud.positions, cloud.curvature, config.stages)
    return PreparedCloud(cloud.positions, features, centroids, groups, cloud.identity, cloud.expression)


def _mlp(x: ad.Tensor, prefix: str, stage: SetAbstractionConfig, params: dict, buffers: dict,
         training: bool, momentum: float) -> ad.Tensor:
    for l in range(len(stage.mlp_widths)):
        name = f"{prefix}.{l}"
        x = ad.matmul(x, params[f"{name}.w"])
        if not stage.use_batchnorm:
            x = ad.add_bias(x, params[f"{name}.b"])
        else:
            # the shift of batch normalisation makes a bias redundant
            x = ad.batch_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"],
                              buffers[f"{name}.mean"], buffers[f"{name}.var"], training, momentum)
        x = ad.relu(x)
    return x


def _local_stage(level_pos, level_feat: ad.Tensor, centroids, groups, stage, prefix, tensors, buffers,
                 training, momentum):
    """One sampled stage for a batch. ``level_pos`` is (B, N, 3); ``level_feat`` is (B*N, F)."""
    b, n, _ = level_pos.shape
    m, k = groups.shape[1:]
    batch = np.arange(b)[:, None]
    centre_pos = level_pos[batch, centroids]
    rel = level_pos[batch[:, :, None], groups] - centre_pos[:, :, None, :]
    flat = (batch[:, :, None] * n + groups).reshape(-1)
    x = ad.concat([ad.constant(rel.reshape(-1, 3)), ad.gather_rows(level_feat, flat)], axis=1)
    h = _mlp(x, prefix, stage, tensors, buffers, training, momentum)
    h = ad.max_pool(ad.reshape(h, (b * m, k, h.shape[-1])), axis=1)
    return centre_pos, h


def forward_batch(batch: Sequence[PreparedCloud], params: FaceNetParams, training: bool = False,
                  momentum: float = 0.9, requires_grad: bool = False):
    """Embeddings for a batch of prepared clouds.

    Returns ``(embeddings, tensors)``: the (B, D) embedding tensor and the
    parameter tensors, whose ``.grad`` is filled after ``embeddings.backward``.
    """
    config = params.config
    tensors = {k: ad.Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.weights.items()}
    pos = np.stack([p.positions for p in batch])
    b = len(batch)
    feat = ad.constant(np.concatenate([p.features for p in batch]))
    for s, stage in enumerate(config.stages):
        if stage.is_global:
            width = feat.shape[-1]
            n = pos.shape[1]
            x = ad.concat([ad.constant(pos.reshape(-1, 3)), feat], axis=1)
            h = _mlp(x, f"sa{s}", stage, tensors, params.buffers, training, momentum)
            feat = ad.max_pool(ad.reshape(h, (b, n, h.shape[-1])), axis=1)
            break
        centroids = np.stack([p.centroids[s] for p in batch])
        groups = np.stack([p.groups[s] for p in batch])
        pos, feat = _local_stage(pos, feat, centroids, groups, stage, f"sa{s}", tensors, params.buffers,
                                 training, momentum)
    out = ad.add_bias(ad.matmul(feat, tensors["head.w"]), tensors["head.b"])
    return ad.l2_normalize(out), tensors


def embed_prepared(prepared: Sequence[PreparedCloud], params: FaceNetParams, batch_size: int = 32) -> np.ndarray:
    out = []
    for start in range(0, len(prepared), batch_size):
        emb, _ = forward_batch(prepared[start:start + batch_size], params)
        out.append(emb.data)
    return np.concatenate(out) if out else np.zeros((0, params.config.embedding_dim))


def embed(clouds: Sequence[PointCloud], params: FaceNetParams, batch_size: int = 32) -> np.ndarray:
    """Inference-mode embeddings, one unit row per cloud."""
    return embed_prepared([prepare_cloud(c, params.config) for c in clouds], params, batch_size)


def forward(cloud: PointCloud, params: FaceNetParams) -> np.ndarray:
    """Unit-norm embedding of one cloud (inference mode)."""
    return embed([cloud], params)[0]


def set_abstraction(positions: np.ndarray, features: np.ndarray, stage: SetAbstractionConfig, params: FaceNetParams,
                    prefix: str = "sa0", curvature: Optional[np.ndarray] = None, training: bool = False):
    """One stage on a single normalised cloud: ``(centroid positions, centroid features)``.

    ``curvature`` feeds the curvature-aware sampler and defaults to the last
    feature column.
    """
    positions = np.asarray(positions, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if len(positions) == 0:
        raise ValueError("empty cloud")
    tensors = {k: ad.Tensor(v) for k, v in params.weights.items()}
    if stage.is_global:
        x = ad.constant(np.concatenate([positions, features], axis=1))
        h = _mlp(x, prefix, stage, tensors, params.buffers, training, 0.9)
        return ORIGIN[None].copy(), h.data.max(axis=0, keepdims=True)
    if curvature is None:
        curvature = features[:, -1]
    (centroids,), (groups,) = plan_stages(positions, curvature, [stage])
    centre, h = _local_stage(positions[None], ad.constant(features), centroids[None], groups[None], stage,
                             prefix, tensors, params.buffers, training, 0.9)
    return centre[0], h.data
