"""Iterative exclusion of the most deviating sample from a tracklet."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import DEGENERATE_DISTANCE, ZERO_NORM, Tracklet, row_norms
from .errors import EmptyTracklet, ZeroNormVector

log = logging.getLogger(__name__)

# Distances this close to the maximum count as tied; the maintained sum
# perturbs mathematically equal distances in the last bits.
TIE_TOL = 1e-12


@dataclass
class TrackletDenoiseResult:
    kept: Tracklet
    excluded: Tracklet  # same id as ``kept``; samples in removal order
    iterations: int
    saturated: bool = False

    @property
    def original_id(self) -> int:
        return self.kept.id


def leave_one_out_distances(X: np.ndarray, total: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Cosine distance of each row of X to the mean of the other rows.

    ``total`` is the sum of the rows of X; the mean is never formed since
    cosine distance ignores the 1/(m-1) scale.
    """
    rest = total[None, :] - X
    rest_norms = row_norms(rest)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - np.einsum("ij,ij->i", X, rest) / (norms * rest_norms)
    d = np.clip(d, 0.0, 2.0)
    d[rest_norms < ZERO_NORM] = DEGENERATE_DISTANCE
    return d


def denoise_tracklet(t: Tracklet, sigma_cst: float, min_size: int = 2) -> TrackletDenoiseResult:
    """Repeatedly drop the sample farthest from the centroid of the others.

    A sample is dropped while its leave-one-out distance is ``>= sigma_cst``
    and the tracklet still has more than ``min_size`` samples. Ties go to the
    lowest frame index; distances within ``TIE_TOL`` of the maximum tie.
    """
    m = len(t)
    if m == 0:
        raise EmptyTracklet(f"tracklet {t.id} is empty")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    X = np.asarray(t.features, dtype=np.float64)
    norms = row_norms(X)
    if np.any(norms < ZERO_NORM):
        raise ZeroNormVector(f"tracklet {t.id} contains a zero-norm feature")

    alive = np.arange(m)
    total = X.sum(axis=0)
    removed: list[int] = []
    saturated = False
    while len(alive) > 1:
        d = leave_one_out_distances(X[alive], total, norms[alive])
        worst = d.max()
        if worst < sigma_cst:
            break
        if len(alive) <= min_size:
            saturated = True
            break
        ties = np.flatnonzero(d >= worst - TIE_TOL)
        pick = ties[np.argmin(t.frames[alive[ties]])] if len(ties) > 1 else ties[0]
        victim = alive[pick]
        removed.append(int(victim))
        total = total - X[victim]
        alive = np.delete(alive, pick)
    if saturated:
        log.debug("tracklet %s saturated at min_size=%d", t.id, min_size)
    return TrackletDenoiseResult(
        kept=t.subset(alive),
        excluded=t.subset(np.array(removed, dtype=np.int64)),
        iterations=len(removed),
        saturated=saturated,
    )
