"""File formats: ASCII clouds, dataset manifests, binary checkpoints and CSV outputs.

Every writer is deterministic and every float is written with ``repr`` so a
write -> read -> write cycle reproduces the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import PointCloud
from .morphable import MorphableModel
from .network.model import FaceNetParams, NetworkConfig
from .recognition import EmbeddingRecord

_MAGIC = b"PFCKPT01"
_HEADER_KEYS = ("identity", "expression", "nose_tip_index")
MANIFEST_FIELDS = ("path", "identity", "expression", "subset")


class DataFormatError(ValueError):
    """A file could not be parsed or is internally inconsistent."""


# -- clouds -----------------------------------------------------------------

def format_cloud(cloud: PointCloud) -> str:
    out = io.StringIO()
    for key in _HEADER_KEYS:
        value = getattr(cloud, key)
        if value is not None:
            out.write(f"# {key}={value}\n")
    normals = cloud.normals if cloud.normals is not None else np.zeros((len(cloud), 3))
    curv = cloud.curvature if cloud.curvature is not None else np.zeros(len(cloud))
    rows = np.concatenate([cloud.positions, normals, curv[:, None]], axis=1)
    for row in rows.tolist():
        out.write(" ".join(map(repr, row)))
        out.write("\n")
    return out.getvalue()


def write_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_text(format_cloud(cloud))


def parse_cloud(text: str, source: str = "<string>") -> PointCloud:
    """Parse a cloud; normals and curvature count as present only if every normal is unit length."""
    labels: dict = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                key = key.strip()
                if key in _HEADER_KEYS:
                    try:
                        labels[key] = int(value.strip())
                    except ValueError:
                        raise DataFormatError(f"{source}:{lineno}: {key} must be an integer, got {value.strip()!r}")
            continue
        parts = line.split()
        if len(parts) != 7:
            raise DataFormatError(f"{source}:{lineno}: expected 7 values, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DataFormatError(f"{source}:{lineno}: non-numeric value in {line!r}")
        if not all(np.isfinite(vals)):
            raise DataFormatError(f"{source}:{lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise DataFormatError(f"{source}: no points")
    arr = np.array(rows)
    tip = labels.get("nose_tip_index")
    if tip is not None and not 0 <= tip < len(arr):
        raise DataFormatError(f"{source}: nose_tip_index {tip} out of range for {len(arr)} points")
    normals, curv = arr[:, 3:6], arr[:, 6]
    has_features = bool(np.all(np.abs(np.linalg.norm(normals, axis=1) - 1.0) <= 1e-6))
    try:
        return PointCloud(
            arr[:, :3],
            normals=normals if has_features else None,
            curvature=curv if has_features else None,
            **labels,
        )
    except ValueError as exc:
        raise DataFormatError(f"{source}: {exc}")


def read_cloud(path) -> PointCloud:
    path = Path(path)
    return parse_cloud(path.read_text(), str(path))


# -- manifests --------------------------------------------------------------

@dataclass
class ManifestRow:
    path: Path
    identity: int
    expression: int
    subset: str = ""

    @property
    def source_id(self) -> str:
        return self.path.stem


def write_manifest(path, rows: Iterable[ManifestRow]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for r in rows:
        p = Path(r.path)
        try:
            rel = p.resolve().relative_to(base).as_posix()
        except ValueError:
            rel = p.as_posix()
        writer.writerow([rel, r.identity, r.expression, r.subset])
    path.write_text(buf.getvalue())


def read_manifest(path, check_exists: bool = True) -> list[ManifestRow]:
    path = Path(path)
    base = path.parent
    rows = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "identity"} <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: manifest header must include path and identity")
        for lineno, rec in enumerate(reader, start=2):
            try:
                identity = int(rec["identity"])
                expression = int(rec.get("expression") or 0)
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}:{lineno}: identity and expression must be integers")
            if identity < 0 or expression < 0:
                raise DataFormatError(f"{path}:{lineno}: labels must be non-negative")
            p = Path(rec["path"])
            p = p if p.is_absolute() else base / p
            if check_exists and not p.exists():
                raise DataFormatError(f"{path}:{lineno}: {p} does not exist")
            rows.append(ManifestRow(p, identity, expression, rec.get("subset") or ""))
    if not rows:
        raise DataFormatError(f"{path}: manifest lists no scans")
    return rows


def load_manifest_clouds(path) -> tuple[list[ManifestRow], list[PointCloud]]:
    """Clouds named by a manifest, labelled from the manifest rows."""
    rows = read_manifest(path)
    clouds = []
    for r in rows:
        c = read_cloud(r.path)
        c.identity, c.expression = r.identity, r.expression
        clouds.append(c)
    return rows, clouds


# -- binary tensor containers --------------------------------------------------

def write_tensors(path, kind: str, tensors: dict, meta: Optional[dict] = None) -> None:
    """Manifest of names/shapes/offsets followed by one little-endian float64 payload."""
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        order = "F" if arr.ndim == 2 else "C"
        flat = np.ravel(arr, order=order).astype("<f8")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "order": order,
                        "offset": offset, "count": int(flat.size)})
        chunks.append(flat.tobytes())
        offset += flat.nbytes
    header = json.dumps({"kind": kind, "meta": meta or {}, "tensors": entries}, sort_keys=True,
                        separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def read_tensors(path, kind: Optional[str] = None) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise DataFormatError(f"{path}: not a pointface checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: corrupt manifest ({exc})")
    if kind is not None and header.get("kind") != kind:
        raise DataFormatError(f"{path}: expected a {kind} file, found {header.get('kind')}")
    payload = raw[16 + hlen:]
    expected = sum(e["count"] for e in header["tensors"]) * 8
    if len(payload) != expected:
        raise DataFormatError(f"{path}: payload has {len(payload)} bytes, manifest says {expected}")
    tensors = {}
    for e in header["tensors"]:
        flat = np.frombuffer(payload, dtype="<f8", count=e["count"], offset=e["offset"]).astype(np.float64)
        tensors[e["name"]] = np.ascontiguousarray(flat.reshape(e["shape"], order=e.get("order", "C")))
    return tensors, header["meta"]


_MODEL_FIELDS = ("mean_shape", "shape_std", "shape_basis", "mean_expr", "expr_std", "expr_basis")


def save_model(path, model: MorphableModel) -> None:
    tensors = {f: getattr(model, f) for f in _MODEL_FIELDS}
    tensors["nose_tip_vertex"] = np.array([float(model.nose_tip_vertex)])
    write_tensors(path, "morphable_model", tensors, {"vertex_count": model.vertex_count,
                                                     "shape_dims": model.n_shape, "expr_dims": model.n_expr})


def load_model(path) -> MorphableModel:
    t, _ = read_tensors(path, "morphable_model")
    try:
        return MorphableModel(**{f: t[f] for f in _MODEL_FIELDS}, nose_tip_vertex=int(t["nose_tip_vertex"][0]))
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing tensor {exc}")


def save_params(path, params: FaceNetParams) -> None:
    tensors = {f"w:{k}": v for k, v in params.weights.items()}
    tensors.update({f"buf:{k}": v for k, v in params.buffers.items()})
    if params.classifier is not None:
        tensors["classifier"] = params.classifier
        tensors["class_labels"] = np.asarray(params.class_labels, dtype=np.float64)
    write_tensors(path, "facenet", tensors, {"network": params.config.to_dict()})


def load_params(path) -> FaceNetParams:
    t, meta = read_tensors(path, "facenet")
    config = NetworkConfig.from_dict(meta["network"])
    params = FaceNetParams(
        config,
        weights={k[2:]: v for k, v in t.items() if k.startswith("w:")},
        buffers={k[4:]: v for k, v in t.items() if k.startswith("buf:")},
    )
    if "classifier" in t:
        params.classifier = t["classifier"]
        params.class_labels = t["class_labels"].astype(np.int64)
    return params


# -- CSV outputs ------------------------------------------------------------

def write_embeddings(path, records: Sequence[EmbeddingRecord]) -> None:
    if not records:
        raise ValueError("no embeddings to write")
    dim = len(records[0].embedding)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["source_id", "identity", "expression", "subset"] + [f"e{i}" for i in range(dim)])
    for r in records:
        writer.writerow([r.source_id, r.identity, r.expression, r.subset] + [repr(float(x)) for x in r.embedding])
    Path(path).write_text(out.getvalue())


def read_embeddings(path) -> list[EmbeddingRecord]:
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["source_id", "identity", "expression", "subset"]:
            raise DataFormatError(f"{path}: not an embeddings file")
        dim = len(header) - 4
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 4:
                raise DataFormatError(f"{path}:{lineno}: expected {dim + 4} fields, got {len(row)}")
            try:
                emb = np.array([float(x) for x in row[4:]])
                records.append(EmbeddingRecord(row[0], int(row[1]), int(row[2]), emb, row[3]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed record")
    return records


def write_loss_csv(path, history) -> None:
    rows = ["epoch,loss,accuracy"] + [f"{r.epoch},{float(r.loss)!r},{float(r.accuracy)!r}" for r in history]
    Path(path).write_text("\n".join(rows) + "\n")


def read_loss_csv(path) -> list[tuple[int, float, float]]:
    with Path(path).open(newline="") as fh:
        return [(int(r["epoch"]), float(r["loss"]), float(r["accuracy"])) for r in csv.DictReader(fh)]


def write_indices_csv(path, indices) -> None:
    Path(path).write_text("order,index\n" + "".join(f"{n},{int(i)}\n" for n, i in enumerate(indices)))


def read_indices_csv(path) -> list[int]:
    with Path(path).open(newline="") as fh:
        return [int(r["index"]) for r in csv.DictReader(fh)]
