"""Within-video clean-up: reallocate excluded samples, then merge near-duplicate tracklets.

Samples are referred to by their dataset row (``Tracklet.rows``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Tracklet, centroid, centroid_distance, distance_matrix
from .linking import BORDER, close_pairs
from .tracklet_denoise import TrackletDenoiseResult
from .unionfind import UnionFind


@dataclass
class VideoDenoiseResult:
    tracklets: list[Tracklet]
    discarded: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    # (row, from tracklet id, to tracklet id)
    reallocations: list[tuple[int, int, int]] = field(default_factory=list)
    # groups of original tracklet ids that ended up as one tracklet
    merges: list[set[int]] = field(default_factory=list)
    merge_passes: int = 0


def reallocate(video: Sequence[TrackletDenoiseResult], sigma_cst: float):
    """Send every excluded sample to the nearest *other* tracklet, or discard it.

    Target centroids are those of the denoised tracklets, frozen for the whole
    pass. A sample moves only if its distance to the nearest centroid is
    strictly below ``sigma_cst``; ties go to the lowest tracklet id.

    Returns ``(tracklets, discarded_rows, reallocations)``.
    """
    if not video:
        raise ValueError("reallocate needs at least one tracklet")
    kept = [r.kept for r in video]
    order = np.argsort([t.id for t in kept], kind="stable")
    ids = np.array([kept[k].id for k in order])
    centroids = np.stack([centroid(kept[k].features) for k in order])
    column_of = {int(k): c for c, k in enumerate(order)}

    sources: list[list[tuple[int, int]]] = [[] for _ in kept]
    discarded: list[int] = []
    reallocations: list[tuple[int, int, int]] = []
    for pos, result in enumerate(video):
        exc = result.excluded
        if len(exc) == 0:
            continue
        if len(kept) == 1:
            discarded.extend(exc.rows.tolist())
            continue
        D = distance_matrix(np.asarray(exc.features, dtype=np.float64), centroids)
        D[:, column_of[pos]] = np.inf
        best = np.argmin(D, axis=1)
        for s, col in enumerate(best.tolist()):
            d = D[s, col]
            if abs(d - sigma_cst) < BORDER:
                d = centroid_distance(exc.features[s], centroids[col])
            row = int(exc.rows[s])
            if d < sigma_cst:
                target = int(order[col])
                sources[target].append((pos, s))
                reallocations.append((row, kept[pos].id, int(ids[col])))
            else:
                discarded.append(row)

    out = []
    for k, t in enumerate(kept):
        if not sources[k]:
            out.append(t)
            continue
        extra = [video[p].excluded.subset([s]) for p, s in sources[k]]
        out.append(Tracklet.concat([t, *extra], id=t.id, label=t.label))
    return out, np.array(discarded, dtype=np.int64), reallocations


def _merge_pass(tracklets, origins, sigma_drm):
    centroids = np.stack([centroid(t.features) for t in tracklets])
    pairs, _ = close_pairs(centroids, sigma_drm)
    if len(pairs) == 0:
        return tracklets, origins, False
    uf = UnionFind(len(tracklets))
    uf.union_all(pairs.tolist())
    merged, merged_origins = [], []
    for members in uf.components():
        if len(members) == 1:
            merged.append(tracklets[members[0]])
            merged_origins.append(origins[members[0]])
            continue
        new_id = min(tracklets[m].id for m in members)
        merged.append(Tracklet.concat([tracklets[m] for m in members], id=new_id))
        merged_origins.append(set().union(*(origins[m] for m in members)))
    return merged, merged_origins, True


def merge_video_tracklets(
    tracklets: Sequence[Tracklet], sigma_drm: float, until_fixpoint: bool = True
) -> VideoDenoiseResult:
    """Merge tracklets whose centroids are within ``sigma_drm``.

    Positive pairwise decisions are closed transitively; each component
    becomes one tracklet carrying its smallest original id, samples in input
    order. With ``until_fixpoint`` the pass is repeated on the merged
    centroids until nothing fires.
    """
    if not tracklets:
        raise ValueError("merge needs at least one tracklet")
    current = list(tracklets)
    origins = [{t.id} for t in current]
    cap = max(1, len(current))
    passes = 0
    while True:
        current, origins, changed = _merge_pass(current, origins, sigma_drm)
        passes += 1
        if not changed or not until_fixpoint:
            break
        if passes > cap:
            raise RuntimeError(f"merge did not reach a fixpoint within {cap} passes")
    merges = [o for o in origins if len(o) > 1]
    return VideoDenoiseResult(current, merges=merges, merge_passes=passes)


def denoise_video(
    video: Sequence[TrackletDenoiseResult], sigma_cst: float, sigma_drm: float
) -> VideoDenoiseResult:
    tracklets, discarded, reallocations = reallocate(video, sigma_cst)
    result = merge_video_tracklets(tracklets, sigma_drm)
    result.discarded = discarded
    result.reallocations = reallocations
    return result
