"""Scripted desk-scale experiments: end-to-end recognition, sampling ablation and triplet fine-tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .features import compute_features
from .geometry import PointCloud
from .morphable import MorphableModel, generate_dataset, make_toy_model
from .network.model import FaceNetParams, embed_prepared, network_config
from .network.training import (
    FineTuneConfig,
    TrainConfig,
    TrainResult,
    fine_tune_triplets,
    prepare_dataset,
    train_classifier,
)
from .recognition import EmbeddingRecord, EvalReport, evaluate_embeddings

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Setup:
    """Everything that pins down one toy recognition experiment."""

    vertex_count: int = 1024
    shape_dims: int = 10
    expr_dims: int = 5
    model_seed: int = 7
    num_identities: int = 20
    train_expressions: int = 10
    eval_expressions: int = 5
    data_seed: int = 11
    num_points: int = 2048
    arch: str = "compact"
    sampler: str = "cps"
    lam: float = 0.1
    region_radius: Optional[float] = 0.7
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 3e-3
    train_seed: int = 0

    def network(self, **overrides):
        kw = dict(arch=self.arch, sampler=self.sampler, lam=self.lam, region_radius=self.region_radius,
                  num_points=self.num_points)
        kw.update(overrides)
        return network_config(**kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.train_seed)


def toy_model(setup: Setup) -> MorphableModel:
    return make_toy_model(setup.vertex_count, setup.shape_dims, setup.expr_dims, setup.model_seed)


def split_dataset(model: MorphableModel, setup: Setup, noise_std: float = 0.0, identity_offset: int = 0,
                  seed: Optional[int] = None) -> tuple[list[PointCloud], list[PointCloud]]:
    """Featured training scans and held-out-expression scans, identity-major.

    Every identity gets ``train_expressions + eval_expressions`` expressions
    drawn together; the last ``eval_expressions`` of them are held out, and
    position noise (when asked for) only touches the held-out scans.
    """
    seed = setup.data_seed if seed is None else seed
    total = setup.train_expressions + setup.eval_expressions
    clean = generate_dataset(model, setup.num_identities, total, seed, identity_offset=identity_offset)
    train = [compute_features(c) for c in clean if c.expression < setup.train_expressions]
    if noise_std > 0:
        held = generate_dataset(model, setup.num_identities, total, seed, noise_std, identity_offset)
    else:
        held = clean
    held = [compute_features(c) for c in held if c.expression >= setup.train_expressions]
    return train, held


def embedding_records(prepared, params: FaceNetParams, batch_size: int = 32) -> list[EmbeddingRecord]:
    emb = embed_prepared(prepared, params, batch_size)
    return [EmbeddingRecord(f"id{p.identity}_ex{p.expression}", int(p.identity), int(p.expression), emb[n])
            for n, p in enumerate(prepared)]


def evaluate(prepared, params: FaceNetParams) -> EvalReport:
    """First-scan-gallery evaluation; ``prepared`` must be identity-major, gallery scan first."""
    return evaluate_embeddings(embedding_records(prepared, params))


@dataclass
class EndToEndResult:
    training: TrainResult
    report: EvalReport
    setup: Setup


def run_end_to_end(setup: Setup = Setup(), on_epoch: Optional[Callable] = None) -> EndToEndResult:
    model = toy_model(setup)
    train, held = split_dataset(model, setup)
    net = setup.network()
    result = train_classifier(prepare_dataset(train, net), net, setup.train_config(), on_epoch)
    report = evaluate(prepare_dataset(held, net), result.params)
    log.info("end-to-end rank1 %.4f auc %.6f", report.rank1, report.auc)
    return EndToEndResult(result, report, setup)


def _radius_name(r: Optional[float]) -> str:
    return "unbounded" if r is None or not np.isfinite(r) else f"{r:g}"


@dataclass
class AblationResult:
    cells: dict  # name -> rank-1
    aucs: dict
    noise_std: float

    def to_csv(self) -> str:
        rows = ["setting,lambda,radius,rank1,auc"]
        for name in self.cells:
            kind, value = name.split("=")
            lam = value if kind == "lambda" else ""
            rad = value if kind == "r" else ""
            rows.append(f"{name},{lam},{rad},{float(self.cells[name])!r},{float(self.aucs[name])!r}")
        return "\n".join(rows) + "\n"


def run_ablation(setup: Setup = Setup(), lambdas: Sequence[float] = (0.0, 0.1, 0.5),
                 radii: Sequence[Optional[float]] = (0.5, 0.7, None), noise_std: float = 0.01) -> AblationResult:
    """Rank-1 on noisy held-out scans, one trained model per sampling setting.

    The lambda sweep keeps the setup's radius and the radius sweep keeps its
    lambda, so each setting differs from the baseline in one knob only.
    """
    model = toy_model(setup)
    train, held = split_dataset(model, setup, noise_std=noise_std)
    settings = [(f"lambda={lam:g}", replace(setup, lam=float(lam))) for lam in lambdas]
    settings += [(f"r={_radius_name(r)}", replace(setup, region_radius=r)) for r in radii]
    cells, aucs = {}, {}
    for name, s in settings:
        net = s.network()
        trained = train_classifier(prepare_dataset(train, net), net, s.train_config())
        report = evaluate(prepare_dataset(held, net), trained.params)
        cells[name], aucs[name] = report.rank1, report.auc
        log.info("ablation %s rank1 %.4f auc %.6f", name, report.rank1, report.auc)
    return AblationResult(cells, aucs, noise_std)


@dataclass
class FineTuneOutcome:
    before: EvalReport
    after: EvalReport
    genuine_before: float
    genuine_after: float
    impostor_before: float
    impostor_after: float
    losses: list


def _mean_pair_scores(records: Sequence[EmbeddingRecord]) -> tuple[float, float]:
    emb = np.stack([r.embedding for r in records])
    emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    ids = np.array([r.identity for r in records])
    sim = emb @ emb.T
    upper = np.triu(np.ones_like(sim, dtype=bool), k=1)
    same = (ids[:, None] == ids[None, :]) & upper
    diff = (ids[:, None] != ids[None, :]) & upper
    return float(sim[same].mean()), float(sim[diff].mean())


def run_fine_tune(params: FaceNetParams, setup: Setup = Setup(), num_identities: int = 5,
                  config: FineTuneConfig = FineTuneConfig(), data_seed: int = 101,
                  identity_offset: int = 1000) -> FineTuneOutcome:
    """Triplet fine-tuning on identities the network never saw.

    Tuning uses the new identities' training-split scans; rank-1 and pair
    similarities are measured on their held-out expressions before and after.
    """
    model = toy_model(setup)
    unseen = replace(setup, num_identities=num_identities)
    tune, held = split_dataset(model, unseen, identity_offset=identity_offset, seed=data_seed)
    tune_p = prepare_dataset(tune, params.config)
    held_p = prepare_dataset(held, params.config)

    rec_before = embedding_records(held_p, params)
    tuned = fine_tune_triplets(params, tune_p, config)
    rec_after = embedding_records(held_p, tuned.params)
    gb, ib = _mean_pair_scores(rec_before)
    ga, ia = _mean_pair_scores(rec_after)
    return FineTuneOutcome(evaluate_embeddings(rec_before), evaluate_embeddings(rec_after), gb, ga, ib, ia,
                           tuned.losses)
