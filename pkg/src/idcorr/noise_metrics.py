"""Binary noise indicators for a labeled sample set.

A cluster is *inconsistent* when its hypersphere radius (max cosine distance of
a member to the cluster mean) reaches ``sigma_cst``; an ordered pair of
clusters is *indiscriminate* when their centroids lie within ``sigma_drm``.
The overall noise averages both counts over the number of clusters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    PipelineConfig,
    centroid,
    centroid_distance,
    group_centroids,
    normalize_rows,
    row_norms,
    unit_step,
    DEGENERATE_DISTANCE,
    CHUNK,
)
from .errors import EmptySet
from .linking import BORDER as _BORDER, close_pairs


def intra_noise(cluster, sigma_cst: float) -> int:
    X = np.asarray(cluster, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptySet("intra_noise needs a non-empty cluster")
    c = centroid(X)
    radius = max(centroid_distance(x, c) for x in X)
    return unit_step(radius - sigma_cst)


def inter_noise(centroid_i, centroid_j, sigma_drm: float) -> int:
    return unit_step(sigma_drm - centroid_distance(centroid_i, centroid_j))


@dataclass
class NoiseReport:
    """Noise indicators of one labeling.

    ``noisy_pairs`` holds the unordered pairs ``(i, j)``, ``i < j``, whose
    inter-discrimination indicator fired; every other pair is 0. Each such pair
    contributes twice to ``overall`` since both orders are counted.
    """

    per_cluster_cst: dict[int, int]
    noisy_pairs: set[tuple[int, int]]
    overall: float
    cluster_count: int
    cluster_ids: list[int] = field(default_factory=list)

    def pair_drm(self, i: int, j: int) -> int:
        if i == j:
            raise ValueError("pair_drm is defined for distinct clusters only")
        return int((min(i, j), max(i, j)) in self.noisy_pairs)

    @property
    def cst_total(self) -> int:
        return sum(self.per_cluster_cst.values())

    @property
    def drm_total(self) -> int:
        """Sum over ordered pairs."""
        return 2 * len(self.noisy_pairs)

    def to_dict(self) -> dict:
        return {
            "cluster_count": self.cluster_count,
            "overall": self.overall,
            "cst_total": self.cst_total,
            "drm_total": self.drm_total,
            "noisy_clusters": sorted(k for k, v in self.per_cluster_cst.items() if v),
            "noisy_pairs": sorted([list(p) for p in self.noisy_pairs]),
        }


def _radii(X: np.ndarray, inverse: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    Cn, degenerate = normalize_rows(centroids)
    radii = np.zeros(len(centroids))
    for s in range(0, len(X), CHUNK):
        x = np.asarray(X[s : s + CHUNK], dtype=np.float64)
        inv = inverse[s : s + CHUNK]
        d = 1.0 - np.einsum("ij,ij->i", x, Cn[inv]) / row_norms(x)
        d = np.clip(d, 0.0, 2.0)
        d[degenerate[inv]] = DEGENERATE_DISTANCE
        np.maximum.at(radii, inv, d)
    return radii


def overall_noise(
    features, labels, config: PipelineConfig | None = None, threads: int = 1
) -> NoiseReport:
    """Noise report of ``features`` grouped by ``labels``.

    ``labels`` may be any integer array aligned with the rows of ``features``.
    """
    config = config or PipelineConfig()
    X = np.asarray(features)
    labels = np.asarray(labels)
    if len(X) == 0:
        raise EmptySet("overall_noise of an empty set")
    if len(labels) != len(X):
        raise ValueError("labels and features differ in length")
    uniq, cents, inverse = group_centroids(X, labels)
    radii = _radii(X, inverse, cents)
    cst = {}
    for k, r in zip(uniq.tolist(), radii.tolist()):
        cst[k] = int(r >= config.sigma_cst)
    # Rows whose radius sits on the criterion are redone through the scalar path.
    border = np.flatnonzero(np.abs(radii - config.sigma_cst) < _BORDER)
    for k in border:
        cst[int(uniq[k])] = intra_noise(X[inverse == k].astype(np.float64), config.sigma_cst)
    close, _ = close_pairs(cents, config.sigma_drm, threads=threads)
    pairs = {(int(uniq[i]), int(uniq[j])) for i, j in close.tolist()}
    m = len(uniq)
    overall = (sum(cst.values()) + 2 * len(pairs)) / m
    return NoiseReport(cst, pairs, overall, m, uniq.tolist())
