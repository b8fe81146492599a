import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from pointface.features import compute_features
from pointface.geometry import PointCloud
from pointface.io import (
    DataFormatError,
    ManifestRow,
    format_cloud,
    load_model,
    load_params,
    parse_cloud,
    read_cloud,
    read_embeddings,
    read_indices_csv,
    read_manifest,
    read_tensors,
    save_model,
    save_params,
    write_cloud,
    write_embeddings,
    write_indices_csv,
    write_manifest,
    write_tensors,
)
from pointface.morphable import synthesize
from pointface.network.model import embed_prepared
from pointface.recognition import EmbeddingRecord

from conftest import tiny_network


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)),
                  elements=st.floats(-1e6, 1e6, allow_subnormal=False)))
def test_cloud_text_round_trip_exact(pts):
    c = PointCloud(pts, identity=3, expression=1)
    back = parse_cloud(format_cloud(c))
    assert back.positions.tobytes() == c.positions.tobytes()
    assert (back.identity, back.expression) == (3, 1)
    assert back.normals is None and format_cloud(back) == format_cloud(c)


def test_featured_cloud_round_trip(tmp_path, small_model):
    c = compute_features(synthesize(small_model))
    write_cloud(tmp_path / "a.xyz", c)
    back = read_cloud(tmp_path / "a.xyz")
    assert back.has_features and back.nose_tip_index == c.nose_tip_index
    for f in ("positions", "normals", "curvature"):
        assert getattr(back, f).tobytes() == getattr(c, f).tobytes()


@pytest.mark.parametrize("text,where", [
    ("0 0 0 0 0 1 0\n1 2 3\n", ":2:"),
    ("# identity=x\n0 0 0 0 0 1 0\n", ":1:"),
    ("0 0 0 0 0 1 0\n\n0 0 a 0 0 1 0\n", ":3:"),
    ("0 0 nan 0 0 1 0\n", ":1:"),
])
def test_parse_errors_report_line(text, where):
    with pytest.raises(DataFormatError, match=where):
        parse_cloud(text, "f.xyz")


def test_parse_empty_and_bad_tip():
    with pytest.raises(DataFormatError, match="no points"):
        parse_cloud("# identity=1\n")
    with pytest.raises(DataFormatError, match="out of range"):
        parse_cloud("# nose_tip_index=4\n0 0 0 0 0 1 0\n")


def test_manifest_round_trip(tmp_path):
    for n in range(3):
        (tmp_path / f"s{n}.xyz").write_text("0 0 0 0 0 1 0\n")
    rows = [ManifestRow(tmp_path / f"s{n}.xyz", n // 2, n % 2, "neutral" if n % 2 == 0 else "") for n in range(3)]
    write_manifest(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "s0.xyz,0,0,neutral"
    back = read_manifest(tmp_path / "m.csv")
    assert [(r.source_id, r.identity, r.expression, r.subset) for r in back] == \
           [("s0", 0, 0, "neutral"), ("s1", 0, 1, ""), ("s2", 1, 0, "neutral")]


def test_manifest_errors(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("path,identity\nmissing.xyz,0\n")
    with pytest.raises(DataFormatError, match=":2:"):
        read_manifest(m)
    m.write_text("path,identity\nmissing.xyz,-1\n")
    with pytest.raises(DataFormatError, match="non-negative"):
        read_manifest(m, check_exists=False)
    m.write_text("file,label\n")
    with pytest.raises(DataFormatError, match="header"):
        read_manifest(m)


def test_tensor_container(tmp_path):
    rng = np.random.default_rng(0)
    t = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5), "c": rng.normal(size=(2, 2, 2))}
    write_tensors(tmp_path / "t.bin", "demo", t, {"x": 1})
    back, meta = read_tensors(tmp_path / "t.bin", "demo")
    assert meta == {"x": 1}
    for k in t:
        assert back[k].shape == t[k].shape and back[k].tobytes() == t[k].tobytes()
    with pytest.raises(DataFormatError, match="expected a other"):
        read_tensors(tmp_path / "t.bin", "other")
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(DataFormatError, match="payload"):
        read_tensors(tmp_path / "cut.bin")
    (tmp_path / "junk.bin").write_bytes(b"hello world" * 3)
    with pytest.raises(DataFormatError, match="not a pointface"):
        read_tensors(tmp_path / "junk.bin")


def test_model_round_trip(tmp_path, small_model):
    save_model(tmp_path / "m.bin", small_model)
    back = load_model(tmp_path / "m.bin")
    assert back.nose_tip_vertex == small_model.nose_tip_vertex
    a, b = np.full(small_model.n_shape, 0.5), np.full(small_model.n_expr, -0.5)
    assert synthesize(back, a, b).positions.tobytes() == synthesize(small_model, a, b).positions.tobytes()
    save_model(tmp_path / "m2.bin", back)
    assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()


def test_params_round_trip_preserves_embeddings(tmp_path):
    params, prepared = tiny_network(1)
    params.classifier = np.random.default_rng(0).normal(size=(5, 3))
    params.class_labels = np.array([4, 7, 9])
    save_params(tmp_path / "p.bin", params)
    back = load_params(tmp_path / "p.bin")
    assert back.config == params.config
    assert list(back.class_labels) == [4, 7, 9]
    np.testing.assert_array_equal(embed_prepared(prepared, back), embed_prepared(prepared, params))


def test_embeddings_csv(tmp_path):
    rng = np.random.default_rng(0)
    recs = [EmbeddingRecord(f"s{i}", i // 2, i % 2, rng.normal(size=4), "x" if i else "") for i in range(4)]
    write_embeddings(tmp_path / "e.csv", recs)
    back = read_embeddings(tmp_path / "e.csv")
    assert [(r.source_id, r.identity, r.expression, r.subset) for r in back] == \
           [(r.source_id, r.identity, r.expression, r.subset) for r in recs]
    assert all(a.embedding.tobytes() == b.embedding.tobytes() for a, b in zip(recs, back))
    (tmp_path / "bad.csv").write_text("source_id,identity,expression,subset,e0\ns,0,0,,1.0,2.0\n")
    with pytest.raises(DataFormatError, match=":2:"):
        read_embeddings(tmp_path / "bad.csv")


def test_indices_csv(tmp_path):
    write_indices_csv(tmp_path / "i.csv", np.array([5, 0, 3]))
    assert read_indices_csv(tmp_path / "i.csv") == [5, 0, 3]
