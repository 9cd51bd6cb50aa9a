"""Link tracklets across videos inside a sliding index window and merge the closures.

All tracklets of all videos are laid out as one sequence (videos in ingestion
order, tracklets by id within a video). Only tracklets at most
``half_width`` positions apart are compared, so the number of predicate
evaluations grows linearly in the sequence length. Indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Tracklet, centroid, normalize_rows
from .linking import close_pairs
from .unionfind import UnionFind


@dataclass(frozen=True)
class SlidingRange:
    center: int
    half_width: int

    def covers(self, n: int) -> range:
        return range(max(0, self.center - self.half_width), min(n, self.center + self.half_width + 1))


@dataclass
class LinkGraph:
    n: int
    edges: np.ndarray  # (E, 2) int64, each row (i, c) with i < c
    evaluations: int = 0
    distances: np.ndarray | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(c)) for i, c in self.edges}


@dataclass
class ClosureMap:
    assignment: np.ndarray  # tracklet index -> closure id (smallest member index)
    closure_count: int

    def members(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, c in enumerate(self.assignment.tolist()):
            out.setdefault(c, []).append(i)
        return out


def expected_evaluations(n: int, half_width: int) -> int:
    """Number of window comparisons for ``n`` tracklets: sum of min(r, c) over c."""
    r = min(half_width, max(n - 1, 0))
    return n * r - r * (r + 1) // 2


def sliding_range_links(
    centroids, half_width: int, sigma_drm: float, threads: int = 1, with_distances: bool = False
) -> LinkGraph:
    """Edges between centroids at most ``half_width`` apart that pass the merge predicate."""
    if half_width < 1:
        raise ValueError("half_width must be >= 1")
    C = np.asarray(centroids, dtype=np.float64)
    pairs, evaluations = close_pairs(C, sigma_drm, window=half_width, threads=threads)
    dists = None
    if with_distances:
        Cn, _ = normalize_rows(C)
        dists = 1.0 - np.einsum("ij,ij->i", Cn[pairs[:, 0]], Cn[pairs[:, 1]])
    return LinkGraph(len(C), pairs, evaluations, dists)


def closures(graph: LinkGraph) -> ClosureMap:
    uf = UnionFind(graph.n)
    uf.union_all(graph.edges.tolist())
    roots = uf.roots()
    return ClosureMap(roots, int(len(np.unique(roots))) if graph.n else 0)


def merge_closures(tracklets: Sequence[Tracklet], closure_map: ClosureMap) -> list[Tracklet]:
    """One tracklet per closure, samples concatenated in input order, labeled by closure id."""
    if len(closure_map.assignment) != len(tracklets):
        raise ValueError("closure map does not cover the tracklets")
    out = []
    for cid, members in sorted(closure_map.members().items()):
        parts = [tracklets[m] for m in members]
        merged = Tracklet.concat(parts, id=cid) if len(parts) > 1 else _relabel(parts[0], cid)
        out.append(merged)
    return out


def _relabel(t: Tracklet, cid: int) -> Tracklet:
    return Tracklet(cid, t.features, t.frames, t.rows, video_id=t.video_id, label=cid)


def denoise_crossvideo(
    tracklets: Sequence[Tracklet],
    half_width: int,
    sigma_drm: float,
    threads: int = 1,
    with_distances: bool = False,
) -> tuple[list[Tracklet], LinkGraph, ClosureMap]:
    centroids = np.stack([centroid(t.features) for t in tracklets])
    graph = sliding_range_links(centroids, half_width, sigma_drm, threads, with_distances)
    cmap = closures(graph)
    return merge_closures(tracklets, cmap), graph, cmap
