"""Classification training with the angular-margin loss and triplet fine-tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..geometry import PointCloud
from .losses import angular_margin_loss, triplet_loss_cosine
from .model import FaceNetParams, NetworkConfig, PreparedCloud, forward_batch, init_classifier, init_params, \
    prepare_cloud

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Loss or gradients stopped being finite."""


@dataclass(frozen=True)
class TrainConfig:
    scale: float = 30.0
    margin: float = 0.3
    margin_form: str = "additive"
    learning_rate: float = 1e-3
    lr_decay_epochs: int = 20
    lr_decay: float = 0.1
    batch_size: int = 32
    epochs: int = 60
    seed: int = 0
    # batch-norm running-average decay: starts at 0.5, 1 - decay halves every bn_decay_epochs, capped at 0.99
    bn_decay_init: float = 0.5
    bn_decay_clip: float = 0.99
    bn_decay_epochs: int = 20

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for classification training")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_epochs)

    def bn_momentum_at(self, epoch: int) -> float:
        return min(self.bn_decay_clip, 1.0 - self.bn_decay_init * 0.5 ** (epoch / self.bn_decay_epochs))


@dataclass(frozen=True)
class FineTuneConfig:
    learning_rate: float = 1e-5
    triplet_margin: float = 0.3
    steps: int = 200
    triplets_per_step: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.triplet_margin < 2:
            raise ValueError("triplet margin must lie in (0, 2)")
        if self.triplets_per_step < 1:
            raise ValueError("need at least one triplet per step")


class Adam:
    """Adaptive moment estimation over a dict of arrays, updated in place."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    params: FaceNetParams
    history: list = field(default_factory=list)


def _batches(order: np.ndarray, batch_size: int):
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # batch statistics need at least two samples
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _check_finite(loss: float, grads: dict, where: str):
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDiverged(f"non-finite loss or gradient during {where} (loss={loss})")


def prepare_dataset(clouds: Sequence[PointCloud], config: NetworkConfig) -> list[PreparedCloud]:
    missing = [i for i, c in enumerate(clouds) if not c.has_features]
    if missing:
        raise ValueError(f"{len(missing)} clouds lack normals/curvature (first: #{missing[0]}); compute features first")
    unlabeled = [i for i, c in enumerate(clouds) if c.identity is None]
    if unlabeled:
        raise ValueError(f"{len(unlabeled)} clouds have no identity label (first: #{unlabeled[0]})")
    return [prepare_cloud(c, config) for c in clouds]


def train_classifier(data: Sequence[PointCloud] | Sequence[PreparedCloud], net_config: NetworkConfig,
                     config: TrainConfig = TrainConfig(),
                     on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train embedding network plus classifier columns on labelled clouds.

    One classifier column per distinct identity label. Shuffling, weight
    initialisation and resampling all derive from ``config.seed`` and the
    network config, so a fixed seed reproduces the loss curve exactly.
    """
    prepared = data if data and isinstance(data[0], PreparedCloud) else prepare_dataset(data, net_config)
    labels_raw = np.array([p.identity for p in prepared])
    class_labels = np.unique(labels_raw)
    if len(class_labels) < 2:
        raise ValueError("classification training needs at least 2 identities")
    labels = np.searchsorted(class_labels, labels_raw)

    rng = np.random.default_rng(config.seed)
    params = init_params(net_config, seed=int(rng.integers(2**31)))
    params.classifier = init_classifier(net_config.embedding_dim, len(class_labels), rng)
    params.class_labels = class_labels
    opt = Adam()
    history = []
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        momentum = config.bn_momentum_at(epoch)
        total, correct, seen = 0.0, 0, 0
        for idx in _batches(rng.permutation(len(prepared)), config.batch_size):
            batch = [prepared[i] for i in idx]
            emb, tensors = forward_batch(batch, params, training=True, momentum=momentum, requires_grad=True)
            loss, g_emb, g_w, logits = angular_margin_loss(emb.data, labels[idx], params.classifier,
                                                           config.scale, config.margin, config.margin_form)
            emb.backward(g_emb)
            grads = {k: t.grad for k, t in tensors.items() if t.grad is not None}
            grads["classifier"] = g_w
            _check_finite(loss, grads, f"epoch {epoch}")
            store = dict(params.weights, classifier=params.classifier)
            opt.step(store, grads, lr)
            params.classifier /= np.linalg.norm(params.classifier, axis=0, keepdims=True)
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(emb.data @ params.classifier, axis=1) == labels[idx]))
            seen += len(idx)
        record = EpochRecord(epoch, total / seen, correct / seen)
        history.append(record)
        log.info("epoch %d loss %.5f acc %.4f lr %g", epoch, record.loss, record.accuracy, lr)
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(params, history)


def _triplet_pool(identities: np.ndarray):
    by_id: dict = {}
    for i, ident in enumerate(identities):
        by_id.setdefault(int(ident), []).append(i)
    anchors = sorted(k for k, v in by_id.items() if len(v) >= 2)
    if not anchors or len(by_id) < 2:
        raise ValueError("need ≥2 scans of one identity and ≥1 other identity")
    return by_id, anchors


def sample_triplets(identities: Sequence[int], count: int, rng) -> np.ndarray:
    """``count`` uniformly drawn (anchor, positive, negative) index triples."""
    by_id, anchors = _triplet_pool(np.asarray(identities))
    ids = sorted(by_id)
    out = np.empty((count, 3), dtype=np.intp)
    for t in range(count):
        ident = anchors[rng.integers(len(anchors))]
        a, p = rng.choice(by_id[ident], 2, replace=False)
        others = [i for i in ids if i != ident]
        neg_id = others[rng.integers(len(others))]
        n = by_id[neg_id][rng.integers(len(by_id[neg_id]))]
        out[t] = (a, p, n)
    return out


@dataclass
class FineTuneResult:
    params: FaceNetParams
    losses: list
    triplets: np.ndarray


def fine_tune_triplets(params: FaceNetParams, data: Sequence[PointCloud] | Sequence[PreparedCloud],
                       config: FineTuneConfig = FineTuneConfig()) -> FineTuneResult:
    """Cosine-triplet fine-tuning of every network weight; the classifier is left alone.

    Batch normalisation runs on its frozen running statistics. Steps whose
    triplets are all already satisfied produce no update.
    """
    prepared = data if data and isinstance(data[0], PreparedCloud) else prepare_dataset(data, params.config)
    identities = np.array([p.identity for p in prepared])
    _triplet_pool(identities)
    rng = np.random.default_rng(config.seed)
    params = params.copy()
    opt = Adam()
    losses, drawn = [], []
    for step in range(config.steps):
        trip = sample_triplets(identities, config.triplets_per_step, rng)
        drawn.append(trip)
        uniq, inverse = np.unique(trip.reshape(-1), return_inverse=True)
        emb, tensors = forward_batch([prepared[i] for i in uniq], params, training=False, requires_grad=True)
        e = emb.data[inverse].reshape(len(trip), 3, -1)
        loss, (ga, gp, gn) = triplet_loss_cosine(e[:, 0], e[:, 1], e[:, 2], config.triplet_margin)
        losses.append(loss)
        if loss == 0.0:
            continue
        g_rows = np.stack([ga, gp, gn], axis=1).reshape(-1, e.shape[-1])
        g_emb = np.zeros_like(emb.data)
        np.add.at(g_emb, inverse, g_rows)
        emb.backward(g_emb)
        grads = {k: t.grad for k, t in tensors.items() if t.grad is not None}
        _check_finite(loss, grads, f"fine-tune step {step}")
        opt.step(params.weights, grads, config.learning_rate)
    return FineTuneResult(params, losses, np.stack(drawn) if drawn else np.zeros((0, 0, 3), dtype=np.intp))
