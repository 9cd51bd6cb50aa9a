"""Binary dataset files, JSONL fixtures and truth sidecars.

Binary layout (little-endian)::

    header   magic b"CIONF1\\0" (7 bytes) | version u16 | count u64 | dim u32
    record   video_id u32 | tracklet_id u32 | frame_index u32 | dim x f32

Output files use tracklet_id ``0xFFFFFFFF`` for samples the pipeline dropped.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import Dataset
from .errors import DatasetFormatError, DimensionMismatch, NonFiniteValues

MAGIC = b"CIONF1\0"
VERSION = 1
HEADER = struct.Struct("<7sHQI")
NO_IDENTITY = 0xFFFFFFFF
_U32_MAX = 0xFFFFFFFF
_WRITE_CHUNK = 65536


def record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("video", "<u4"), ("tracklet", "<u4"), ("frame", "<u4"), ("feature", "<f4", (dim,))]
    )


def write_dataset(path, dataset: Dataset, tracklet_ids=None) -> None:
    """Write ``dataset``; ``tracklet_ids`` overrides the tracklet column (-1 = dropped)."""
    ids = dataset.tracklet_ids if tracklet_ids is None else np.asarray(tracklet_ids, dtype=np.int64)
    ids = np.where(ids < 0, NO_IDENTITY, ids)
    for name, col in (("video_id", dataset.video_ids), ("tracklet_id", ids), ("frame_index", dataset.frames)):
        if len(col) and (col.min() < 0 or col.max() > _U32_MAX):
            raise ValueError(f"{name} does not fit in u32")
    n, dim = len(dataset), dataset.dim
    dt = record_dtype(dim)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, n, dim))
        for s in range(0, n, _WRITE_CHUNK):
            e = min(n, s + _WRITE_CHUNK)
            rec = np.empty(e - s, dtype=dt)
            rec["video"] = dataset.video_ids[s:e]
            rec["tracklet"] = ids[s:e]
            rec["frame"] = dataset.frames[s:e]
            rec["feature"] = dataset.features[s:e]
            f.write(rec.tobytes())


def read_header(path) -> tuple[int, int, int]:
    with open(path, "rb") as f:
        raw = f.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than the header")
    magic, version, count, dim = HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise DatasetFormatError(f"{path}: dimension must be >= 1")
    return version, count, dim


def read_dataset(path, expected_dim: int | None = None) -> Dataset:
    _, count, dim = read_header(path)
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatch(f"{path}: dimension {dim}, expected {expected_dim}")
    dt = record_dtype(dim)
    size = os.path.getsize(path)
    want = HEADER.size + count * dt.itemsize
    if size != want:
        raise DatasetFormatError(f"{path}: {size} bytes on disk, header implies {want}")
    rec = np.fromfile(path, dtype=dt, count=count, offset=HEADER.size)
    features = np.ascontiguousarray(rec["feature"])
    if not np.all(np.isfinite(features)):
        raise NonFiniteValues(f"{path}: non-finite feature values")
    return Dataset(
        features,
        rec["video"].astype(np.int64),
        rec["tracklet"].astype(np.int64),
        rec["frame"].astype(np.int64),
    )


def read_jsonl(path) -> Dataset:
    """One JSON object per line: ``{"video": v, "tracklet": t, "frame": f, "feature": [...]}``."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append((int(obj["video"]), int(obj["tracklet"]), int(obj["frame"]), obj["feature"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DatasetFormatError(f"{path}: no records")
    dims = {len(r[3]) for r in rows}
    if len(dims) != 1:
        raise DimensionMismatch(f"{path}: mixed feature dimensions {sorted(dims)}")
    features = np.array([r[3] for r in rows], dtype=np.float32)
    return Dataset(features, [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows])


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
    if head == MAGIC:
        return read_dataset(path)
    if Path(path).suffix in (".jsonl", ".json"):
        return read_jsonl(path)
    raise DatasetFormatError(f"{path}: not a dataset file (bad magic)")


def write_truth(path, identity, extra: dict | None = None) -> None:
    doc = {
        "schema": "idcorr.truth/1",
        "identity": {str(i): int(p) for i, p in enumerate(np.asarray(identity).tolist())},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f)


def read_truth(path) -> np.ndarray:
    with open(path) as f:
        doc = json.load(f)
    mapping = doc["identity"] if isinstance(doc, dict) and "identity" in doc else doc
    if isinstance(mapping, list):
        return np.asarray(mapping, dtype=np.int64)
    n = len(mapping)
    out = np.empty(n, dtype=np.int64)
    try:
        for k, v in mapping.items():
            out[int(k)] = int(v)
    except (IndexError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: truth indices must cover 0..{n - 1}") from exc
    return out
