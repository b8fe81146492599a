"""Cosine matching, galleries, ROC analysis and identification protocols."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

PROTOCOLS = ("first_scan_gallery", "subset_breakdown")


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero vector has no direction")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class EmbeddingRecord:
    source_id: str
    identity: int
    expression: int
    embedding: np.ndarray
    subset: str = ""


@dataclass
class GalleryEntry:
    identity: int
    embedding: np.ndarray
    source_id: str = ""


class Gallery:
    """Enrolled embeddings; an identity may own several entries."""

    def __init__(self, entries: Sequence[GalleryEntry] = ()):
        self.entries: list[GalleryEntry] = []
        for e in entries:
            self.add(e.identity, e.embedding, e.source_id)

    def add(self, identity: int, embedding, source_id: str = "") -> None:
        emb = np.asarray(embedding, dtype=np.float64)
        norm = np.linalg.norm(emb)
        if norm == 0:
            raise ValueError("zero vector has no direction")
        self.entries.append(GalleryEntry(int(identity), emb / norm, source_id))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def identities(self) -> np.ndarray:
        return np.array([e.identity for e in self.entries], dtype=np.int64)

    def matrix(self) -> np.ndarray:
        return np.stack([e.embedding for e in self.entries])


def identity_scores(probe, gallery: Gallery) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct identities and the best cosine score each reaches."""
    if len(gallery) == 0:
        raise ValueError("gallery is empty")
    probe = np.asarray(probe, dtype=np.float64)
    norm = np.linalg.norm(probe)
    if norm == 0:
        raise ValueError("zero vector has no direction")
    scores = gallery.matrix() @ (probe / norm)
    ids = gallery.identities
    uniq, inverse = np.unique(ids, return_inverse=True)
    best = np.full(len(uniq), -np.inf)
    np.maximum.at(best, inverse, scores)
    return uniq, best


def identify(probe, gallery: Gallery) -> list[tuple[int, float]]:
    """Identities ranked by best cosine score, descending; ties go to the lower label."""
    uniq, best = identity_scores(probe, gallery)
    order = np.lexsort((uniq, -best))
    return [(int(uniq[i]), float(best[i])) for i in order]


@dataclass
class RocCurve:
    far: np.ndarray
    tar: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.far.tolist(), self.tar.tolist()))


def roc_curve(genuine, impostor, num_thresholds: Optional[int] = None) -> RocCurve:
    """Accept-rate trade-off over a threshold sweep.

    A pair is accepted when its score is >= the threshold. By default every
    distinct score is a threshold, plus +inf and -inf as end points, which
    makes the trapezoidal AUC exact (ties earn half credit). With
    ``num_thresholds`` the sweep is an even grid over the score range instead.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64).ravel())
    i = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    if len(g) == 0 or len(i) == 0:
        raise ValueError("genuine and impostor score sets must both be non-empty")
    if num_thresholds is None:
        inner = np.unique(np.concatenate([g, i]))[::-1]
    else:
        lo, hi = min(g[0], i[0]), max(g[-1], i[-1])
        inner = np.linspace(hi, lo, max(int(num_thresholds), 2))
    thresholds = np.concatenate([[np.inf], inner, [-np.inf]])
    tar = (len(g) - np.searchsorted(g, thresholds, side="left")) / len(g)
    far = (len(i) - np.searchsorted(i, thresholds, side="left")) / len(i)
    auc = float(np.sum(np.diff(far) * (tar[1:] + tar[:-1]) / 2.0))
    return RocCurve(far, tar, thresholds, auc)


def tar_at_far(curve: RocCurve, target_far: float) -> float:
    """Best true-accept rate among thresholds with false-accept rate <= ``target_far``."""
    ok = curve.far <= target_far
    return float(curve.tar[ok].max()) if ok.any() else 0.0


@dataclass
class EvalReport:
    protocol: str
    rank1: float
    roc: RocCurve
    num_gallery: int
    num_probes: int
    subsets: dict = field(default_factory=dict)
    probe_ranks: np.ndarray = field(default=None, repr=False)

    @property
    def auc(self) -> float:
        return self.roc.auc

    def rank_k(self, k: int) -> float:
        return float(np.mean(self.probe_ranks <= k))

    def to_text(self) -> str:
        lines = [
            f"protocol: {self.protocol}",
            f"gallery: {self.num_gallery}",
            f"probes: {self.num_probes}",
            f"rank1: {self.rank1:.4f}",
            f"rank5: {self.rank_k(5):.4f}",
            f"auc: {self.auc:.6f}",
            f"tar@far=0.001: {tar_at_far(self.roc, 1e-3):.4f}",
            f"tar@far=0.01: {tar_at_far(self.roc, 1e-2):.4f}",
        ]
        for name in sorted(self.subsets):
            rate, count = self.subsets[name]
            lines.append(f"subset {name}: rank1 {rate:.4f} ({count} probes)")
        return "\n".join(lines) + "\n"

    def roc_csv(self) -> str:
        rows = ["far,tar,threshold"]
        for f, t, th in zip(self.roc.far, self.roc.tar, self.roc.thresholds):
            rows.append(f"{float(f)!r},{float(t)!r},{float(th)!r}")
        return "\n".join(rows) + "\n"


def split_first_scan(records: Sequence[EmbeddingRecord]) -> tuple[list[int], list[int]]:
    """Indices of gallery (first scan of each identity) and probe records, in input order."""
    seen: set = set()
    gallery, probes = [], []
    for n, r in enumerate(records):
        if r.identity in seen:
            probes.append(n)
        else:
            seen.add(r.identity)
            gallery.append(n)
    return gallery, probes


def evaluate_embeddings(records: Sequence[EmbeddingRecord], protocol: str = "first_scan_gallery",
                        subsets: Optional[Mapping[str, str]] = None) -> EvalReport:
    """Rank-1, ROC and optional per-subset rank-1 from precomputed embeddings.

    The first record of every identity is enrolled; the rest are probes.
    Genuine scores pair each probe with its own identity's gallery entries,
    impostor scores with every other entry. ``subsets`` maps source ids to
    subset tags and overrides the tags stored on the records.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")
    if not records:
        raise ValueError("no embeddings to evaluate")
    gal_idx, probe_idx = split_first_scan(records)
    if not probe_idx:
        raise ValueError("no probes: every identity has a single scan")
    tags = [subsets.get(r.source_id, r.subset) if subsets else r.subset for r in records]
    if protocol == "subset_breakdown":
        missing = [records[n].source_id for n in probe_idx if not tags[n]]
        if missing:
            raise ValueError(f"subset_breakdown needs a subset tag on every probe; missing for {missing[0]!r}")

    gallery = Gallery([GalleryEntry(records[n].identity, records[n].embedding, records[n].source_id) for n in gal_idx])
    gmat = gallery.matrix()
    gids = gallery.identities
    probes = np.stack([records[n].embedding for n in probe_idx])
    probes = probes / np.linalg.norm(probes, axis=1, keepdims=True)
    pids = np.array([records[n].identity for n in probe_idx])
    scores = probes @ gmat.T

    ranks = np.empty(len(probe_idx), dtype=np.int64)
    for row, n in enumerate(probe_idx):
        ranking = identify(probes[row], gallery)
        ranks[row] = 1 + [ident for ident, _ in ranking].index(records[n].identity)
    same = pids[:, None] == gids[None, :]
    roc = roc_curve(scores[same], scores[~same])

    breakdown = {}
    if protocol == "subset_breakdown" or any(tags[n] for n in probe_idx):
        by_tag: dict = {}
        for row, n in enumerate(probe_idx):
            if tags[n]:
                by_tag.setdefault(tags[n], []).append(ranks[row] == 1)
        breakdown = {k: (float(np.mean(v)), len(v)) for k, v in by_tag.items()}
    return EvalReport(protocol, float(np.mean(ranks == 1)), roc, len(gal_idx), len(probe_idx), breakdown, ranks)


def evaluate_protocol(dataset, params, protocol: str = "first_scan_gallery",
                      subsets: Optional[Mapping[str, str]] = None, batch_size: int = 32) -> EvalReport:
    """Embed a labelled dataset with the network and evaluate it.

    ``dataset`` is a sequence of point clouds in enrolment order; source ids
    are their positions in that sequence unless ``subsets`` keys say otherwise.
    """
    from .network.model import embed

    clouds = list(dataset)
    if not clouds:
        raise ValueError("empty dataset")
    if any(c.identity is None for c in clouds):
        raise ValueError("every scan needs an identity label")
    emb = embed(clouds, params, batch_size)
    records = [
        EmbeddingRecord(str(n), c.identity, c.expression if c.expression is not None else 0, emb[n])
        for n, c in enumerate(clouds)
    ]
    return evaluate_embeddings(records, protocol, subsets)
