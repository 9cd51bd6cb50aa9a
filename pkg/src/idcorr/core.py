"""Domain types, the cosine metric and numeric conventions used everywhere else.

Features may be stored in any float dtype; every reduction is carried out in
float64 with index-order summation so that threshold comparisons near the
criteria are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySet,
    InvalidConfig,
    NonFiniteValues,
    ZeroNormVector,
)

# Norms below this are treated as zero.
ZERO_NORM = 1e-12
# Distance assigned to anything measured against a degenerate (zero) centroid.
DEGENERATE_DISTANCE = 2.0
NORMALIZED_TOL = 1e-6
# Rows upcast to float64 at a time when streaming over large feature tables.
CHUNK = 65536

FeatureVector = np.ndarray


def as_feature(values, dim: int | None = None, normalized: bool = False) -> FeatureVector:
    """Validate ``values`` as a single feature vector and return it as float64."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty 1-d vector, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValues("feature contains NaN or Inf")
    if normalized:
        n = np.linalg.norm(x)
        if abs(n - 1.0) > NORMALIZED_TOL:
            raise ValueError(f"feature flagged normalized has norm {n}")
    return x


def validate_features(features: np.ndarray) -> None:
    """Ingestion check for raw user features: finite and nonzero rows."""
    if features.ndim != 2 or features.shape[1] < 1:
        raise DimensionMismatch(f"features must be (n, D) with D >= 1, got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise NonFiniteValues("features contain NaN or Inf")
    for s in range(0, len(features), CHUNK):
        norms = row_norms(np.asarray(features[s : s + CHUNK], dtype=np.float64))
        bad = np.flatnonzero(norms < ZERO_NORM)
        if bad.size:
            raise ZeroNormVector(f"zero-norm feature row at index {s + bad[0]}")


@dataclass(frozen=True)
class Sample:
    feature: FeatureVector
    video_id: int
    tracklet_id: int
    frame_index: int

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.video_id, self.tracklet_id, self.frame_index)


@dataclass
class Tracklet:
    """An ordered group of samples treated as one provisional identity.

    Samples are stored column-wise: ``features[i]``, ``frames[i]`` and
    ``rows[i]`` describe the i-th sample. ``rows`` are the sample indices in
    the enclosing dataset and serve as sample identity across stages.
    """

    id: int
    features: np.ndarray
    frames: np.ndarray
    rows: np.ndarray
    video_id: int = 0
    label: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise DimensionMismatch(f"tracklet features must be 2-d, got {self.features.shape}")
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.int64)
        if not (len(self.frames) == len(self.rows) == len(self.features)):
            raise ValueError("features, frames and rows must have equal length")
        if self.label is None:
            self.label = self.id

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [
            Sample(self.features[i], self.video_id, self.id, int(self.frames[i]))
            for i in range(len(self))
        ]

    def subset(self, index) -> Tracklet:
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            features=self.features[index],
            frames=self.frames[index],
            rows=self.rows[index],
        )

    def centroid(self) -> FeatureVector:
        return centroid(self.features)

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[Sample],
        id: int | None = None,
        rows: Iterable[int] | None = None,
        label: int | None = None,
    ) -> Tracklet:
        if not samples:
            raise EmptySet("cannot build a tracklet from no samples")
        if id is None:
            id = samples[0].tracklet_id
        if any(s.tracklet_id != id for s in samples):
            raise ValueError("all samples must share the tracklet id")
        features = np.stack([np.asarray(s.feature) for s in samples])
        frames = np.array([s.frame_index for s in samples], dtype=np.int64)
        rows = np.arange(len(samples)) if rows is None else np.fromiter(rows, dtype=np.int64)
        return cls(id, features, frames, rows, video_id=samples[0].video_id, label=label)

    @classmethod
    def concat(cls, parts: Sequence[Tracklet], id: int, label: int | None = None) -> Tracklet:
        return cls(
            id,
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.frames for p in parts]),
            np.concatenate([p.rows for p in parts]),
            video_id=parts[0].video_id,
            label=id if label is None else label,
        )


@dataclass(frozen=True)
class Hypersphere:
    centroid: FeatureVector
    radius: float

    @classmethod
    def enclosing(cls, features) -> Hypersphere:
        c = centroid(features)
        X = np.asarray(features, dtype=np.float64)
        return cls(c, float(centroid_distances(X, c).max()))


@dataclass(frozen=True)
class PipelineConfig:
    sigma_cst: float = 0.2
    sigma_drm: float = 0.18
    sliding_half_width: int = 1000
    min_tracklet_size: int = 2
    distance: str = "cosine"

    def __post_init__(self):
        if not 0 < self.sigma_cst <= 2:
            raise InvalidConfig(f"sigma_cst must be in (0, 2], got {self.sigma_cst}")
        if not 0 < self.sigma_drm <= 2:
            raise InvalidConfig(f"sigma_drm must be in (0, 2], got {self.sigma_drm}")
        if self.sliding_half_width < 1:
            raise InvalidConfig("sliding_half_width must be >= 1")
        if self.min_tracklet_size < 1:
            raise InvalidConfig("min_tracklet_size must be >= 1")
        if self.distance != "cosine":
            raise InvalidConfig(f"unsupported distance {self.distance!r}")

    def to_dict(self) -> dict:
        return {
            "sigma_cst": self.sigma_cst,
            "sigma_drm": self.sigma_drm,
            "sliding_half_width": self.sliding_half_width,
            "min_tracklet_size": self.min_tracklet_size,
            "distance": self.distance,
        }


def distance(a, b) -> float:
    """Cosine distance ``1 - a.b / (|a| |b|)``, in [0, 2]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise ZeroNormVector("cosine distance undefined for a zero-norm vector")
    return _clip(1.0 - float(np.dot(a, b)) / (na * nb))


def centroid_distance(x, c) -> float:
    """Like :func:`distance`, but a degenerate centroid ``c`` yields 2.0."""
    c = np.asarray(c, dtype=np.float64)
    if np.linalg.norm(c) < ZERO_NORM:
        return DEGENERATE_DISTANCE
    return distance(x, c)


def centroid(samples) -> FeatureVector:
    """Arithmetic mean of the samples, summed in index order, not renormalized."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :] if X.size else X.reshape(0, 0)
    if X.shape[0] == 0:
        raise EmptySet("centroid of an empty set")
    # axis-0 reduction accumulates row by row, so the order is fixed.
    return X.sum(axis=0) / X.shape[0]


def unit_step(x: float) -> int:
    return 1 if x >= 0 else 0


def _clip(d: float) -> float:
    return min(max(d, 0.0), 2.0)


def row_norms(X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", X, X))


def normalize_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (unit rows, degenerate mask); degenerate rows are left as zeros."""
    X = np.asarray(X, dtype=np.float64)
    n = row_norms(X)
    degenerate = n < ZERO_NORM
    out = X / np.where(degenerate, 1.0, n)[:, None]
    if degenerate.any():
        out[degenerate] = 0.0
    return out, degenerate


def centroid_distances(X: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Distances of every row of X to one centroid (2.0 if it is degenerate)."""
    X = np.asarray(X, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    nc = np.linalg.norm(c)
    if nc < ZERO_NORM:
        return np.full(len(X), DEGENERATE_DISTANCE)
    d = 1.0 - (X @ c) / (row_norms(X) * nc)
    return np.clip(d, 0.0, 2.0)


def distance_matrix(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Cosine distances between rows of X and rows of C.

    Rows of C with zero norm are computed centroids and map to 2.0.
    """
    Xn, _ = normalize_rows(X)
    Cn, degenerate = normalize_rows(C)
    D = 1.0 - Xn @ Cn.T
    np.clip(D, 0.0, 2.0, out=D)
    D[:, degenerate] = DEGENERATE_DISTANCE
    return D


def group_centroids(features: np.ndarray, labels: np.ndarray):
    """Centroids of every label group.

    Returns ``(unique_labels, centroids, inverse)`` where ``inverse`` maps each
    row to its position in ``unique_labels``. Sums run in row order.
    """
    labels = np.asarray(labels)
    uniq, inverse = np.unique(labels, return_inverse=True)
    X = np.asarray(features)
    sums = np.zeros((len(uniq), X.shape[1]), dtype=np.float64)
    for s in range(0, len(X), CHUNK):
        np.add.at(sums, inverse[s : s + CHUNK], np.asarray(X[s : s + CHUNK], dtype=np.float64))
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    return uniq, sums / counts[:, None], inverse


@dataclass
class Dataset:
    """A flat table of samples: features plus provenance columns."""

    features: np.ndarray
    video_ids: np.ndarray
    tracklet_ids: np.ndarray
    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        n = len(self.features)
        self.video_ids = np.asarray(self.video_ids, dtype=np.int64)
        self.tracklet_ids = np.asarray(self.tracklet_ids, dtype=np.int64)
        self.frames = np.asarray(self.frames, dtype=np.int64)
        if not (len(self.video_ids) == len(self.tracklet_ids) == len(self.frames) == n):
            raise ValueError("dataset columns must have equal length")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> Dataset:
        if not samples:
            raise EmptySet("empty dataset")
        return cls(
            np.stack([np.asarray(s.feature) for s in samples]),
            [s.video_id for s in samples],
            [s.tracklet_id for s in samples],
            [s.frame_index for s in samples],
        )

    def validate(self) -> None:
        validate_features(self.features)
        keys = np.stack([self.video_ids, self.tracklet_ids, self.frames], axis=1)
        if len(np.unique(keys, axis=0)) != len(keys):
            raise ValueError("(video_id, tracklet_id, frame_index) must be unique")

    def video_order(self) -> np.ndarray:
        """Video ids in order of first appearance."""
        uniq, first = np.unique(self.video_ids, return_index=True)
        return uniq[np.argsort(first, kind="stable")]

    def tracklets(self) -> list[list[Tracklet]]:
        """Group samples into tracklets, one list per video.

        Videos come in ingestion order, tracklets by ascending id, samples in
        row order.
        """
        videos = self.video_order()
        rank = np.empty(len(videos), dtype=np.int64)
        rank[np.argsort(videos)] = np.arange(len(videos))
        vrank = rank[np.searchsorted(np.sort(videos), self.video_ids)]
        order = np.lexsort((np.arange(len(self)), self.tracklet_ids, vrank))
        feats = self.features[order]
        v = vrank[order]
        t = self.tracklet_ids[order]
        fr = self.frames[order]
        brk = np.flatnonzero((np.diff(v) != 0) | (np.diff(t) != 0)) + 1
        starts = np.concatenate([[0], brk])
        ends = np.concatenate([brk, [len(order)]])
        out: list[list[Tracklet]] = [[] for _ in videos]
        for s, e in zip(starts, ends):
            vid = int(videos[v[s]])
            out[v[s]].append(Tracklet(int(t[s]), feats[s:e], fr[s:e], order[s:e], video_id=vid))
        return out
