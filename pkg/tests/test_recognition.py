import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pointface.recognition import (
    EmbeddingRecord,
    Gallery,
    GalleryEntry,
    cosine_similarity,
    evaluate_embeddings,
    identify,
    roc_curve,
    split_first_scan,
    tar_at_far,
)


def pairwise_auc(genuine, impostor):
    """P(genuine > impostor) + 0.5 P(tie), by exhaustive comparison."""
    wins = ties = 0
    for g, i in itertools.product(genuine, impostor):
        wins += g > i
        ties += g == i
    return (wins + 0.5 * ties) / (len(genuine) * len(impostor))


def test_cosine_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert cosine_similarity(a, a) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity(a, -a) == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="zero vector"):
        cosine_similarity(a, np.zeros(3))


def test_identify_single_identity_and_exact_probe():
    rng = np.random.default_rng(0)
    e = rng.normal(size=(3, 8))
    g = Gallery([GalleryEntry(4, e[0]), GalleryEntry(9, e[1]), GalleryEntry(9, e[2])])
    top, score = identify(e[1], g)[0]
    assert top == 9 and score == pytest.approx(1.0)
    assert identify(e[0], Gallery([GalleryEntry(2, e[1])]))[0][0] == 2


def test_identify_ties_go_to_lower_label():
    v = np.array([1.0, 0.0])
    g = Gallery([GalleryEntry(7, v), GalleryEntry(3, v)])
    assert [i for i, _ in identify(v, g)] == [3, 7]


def test_identify_matches_brute_force():
    rng = np.random.default_rng(1)
    entries = [GalleryEntry(int(i), rng.normal(size=16)) for i in rng.integers(0, 10, 25)]
    g = Gallery(entries)
    for probe in rng.normal(size=(50, 16)):
        best = {}
        for e in entries:
            s = cosine_similarity(probe, e.embedding)
            best[e.identity] = max(best.get(e.identity, -2.0), s)
        ref = sorted(best, key=lambda i: (-best[i], i))
        got = identify(probe, g)
        assert [i for i, _ in got] == ref
        np.testing.assert_allclose([s for _, s in got], [best[i] for i in ref], atol=1e-12)


@given(st.permutations(list(range(8))))
def test_identify_gallery_order_invariant(order):
    rng = np.random.default_rng(5)
    emb = rng.normal(size=(8, 6))
    labels = [0, 0, 1, 2, 2, 3, 4, 4]
    probe = rng.normal(size=6)
    base = identify(probe, Gallery([GalleryEntry(labels[i], emb[i]) for i in range(8)]))
    shuffled = identify(probe, Gallery([GalleryEntry(labels[i], emb[i]) for i in order]))
    assert [i for i, _ in base] == [i for i, _ in shuffled]


@pytest.mark.parametrize("seed", range(20))
def test_auc_equals_pairwise_estimator(seed):
    rng = np.random.default_rng(seed)
    # rounded scores so ties occur
    g = np.round(rng.normal(0.5, 0.3, rng.integers(20, 120)), 2)
    i = np.round(rng.normal(0.0, 0.3, rng.integers(20, 120)), 2)
    assert abs(roc_curve(g, i).auc - pairwise_auc(g, i)) < 1e-9


def test_perfect_separation_and_chance():
    assert roc_curve([0.9, 0.8], [0.1, 0.2, 0.3]).auc == 1.0
    s = np.random.default_rng(0).normal(size=1000)
    assert abs(roc_curve(s, s.copy()).auc - 0.5) <= 0.02


def test_roc_errors_and_grid():
    with pytest.raises(ValueError):
        roc_curve([], [0.1])
    curve = roc_curve([0.9, 0.5], [0.4, 0.1], num_thresholds=11)
    assert len(curve.thresholds) == 13 and curve.auc == 1.0


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=40), st.lists(st.floats(-1, 1), min_size=1, max_size=40))
def test_roc_monotone(g, i):
    c = roc_curve(g, i)
    assert np.all(np.diff(c.far) >= 0) and np.all(np.diff(c.tar) >= 0)
    assert c.far[0] == c.tar[0] == 0.0 and c.far[-1] == c.tar[-1] == 1.0
    assert 0.0 <= c.auc <= 1.0


def test_tar_at_far():
    c = roc_curve([0.9, 0.8, 0.3], [0.5, 0.1])
    assert tar_at_far(c, 0.0) == pytest.approx(2 / 3)
    assert tar_at_far(c, 1.0) == 1.0


def _records(emb, ids, subsets=None):
    return [EmbeddingRecord(f"s{n}", int(i), n, e, subsets[n] if subsets else "") for n, (i, e) in
            enumerate(zip(ids, emb))]


def test_first_scan_split():
    recs = _records(np.eye(5), [3, 1, 3, 1, 2])
    assert split_first_scan(recs) == ([0, 1, 4], [2, 3])


def test_duplicate_probes_give_perfect_rank1():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(4, 8))
    emb = np.concatenate([base, base])
    report = evaluate_embeddings(_records(emb, [0, 1, 2, 3] * 2))
    assert report.rank1 == 1.0 and report.auc == 1.0
    assert report.to_text() == evaluate_embeddings(_records(emb, [0, 1, 2, 3] * 2)).to_text()


def test_rank1_matches_manual_recompute():
    rng = np.random.default_rng(2)
    ids = np.repeat(np.arange(6), 4)
    emb = rng.normal(size=(6, 10))[ids] + 0.9 * rng.normal(size=(24, 10))
    report = evaluate_embeddings(_records(emb, ids))
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    gal = np.arange(0, 24, 4)
    probes = np.setdiff1d(np.arange(24), gal)
    manual = np.mean(ids[gal][np.argmax(unit[probes] @ unit[gal].T, axis=1)] == ids[probes])
    assert report.rank1 == manual


def test_roc_csv_reintegrates_to_auc():
    rng = np.random.default_rng(3)
    ids = np.repeat(np.arange(5), 3)
    report = evaluate_embeddings(_records(rng.normal(size=(15, 6)), ids))
    rows = np.array([[float(v) for v in line.split(",")] for line in report.roc_csv().splitlines()[1:]])
    area = float(np.sum(np.diff(rows[:, 0]) * (rows[1:, 1] + rows[:-1, 1]) / 2))
    assert abs(area - report.auc) < 1e-9


def test_subset_breakdown():
    rng = np.random.default_rng(4)
    ids = np.repeat(np.arange(3), 3)
    tags = ["neutral", "happy", "sad"] * 3
    report = evaluate_embeddings(_records(rng.normal(size=(9, 5)), ids, tags), "subset_breakdown")
    assert set(report.subsets) == {"happy", "sad"}
    assert all(count == 3 for _, count in report.subsets.values())
    with pytest.raises(ValueError, match="subset tag"):
        evaluate_embeddings(_records(rng.normal(size=(9, 5)), ids), "subset_breakdown")


def test_protocol_errors():
    with pytest.raises(ValueError, match="unknown protocol"):
        evaluate_embeddings(_records(np.eye(2), [0, 0]), "nope")
    with pytest.raises(ValueError, match="no probes"):
        evaluate_embeddings(_records(np.eye(2), [0, 1]))
