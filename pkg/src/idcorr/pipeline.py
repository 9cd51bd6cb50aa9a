"""Stage orchestration: ingest -> tracklet -> video -> cross-video."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, PipelineConfig, Tracklet
from .crossvideo_denoise import LinkGraph, denoise_crossvideo
from .noise_metrics import overall_noise
from .tracklet_denoise import TrackletDenoiseResult, denoise_tracklet
from .video_denoise import denoise_video

log = logging.getLogger(__name__)

STAGES = ("tracklet", "video", "cross")
REPORT_SCHEMA = "idcorr.run_report/1"
NOISE_CAP = 10000


def default_threads() -> int:
    value = os.environ.get("CION_THREADS")
    return max(1, int(value)) if value else 1


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


@dataclass
class PipelineResult:
    labels: np.ndarray  # id written to the output file, -1 when dropped
    stage_labels: dict[str, np.ndarray]  # per-row groups, unique across videos
    tracklets: list[Tracklet]
    report: dict
    graph: LinkGraph | None = None
    discarded: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def _sequence_labels(n: int, tracklets) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    for pos, t in enumerate(tracklets):
        labels[t.rows] = pos
    return labels


def _id_labels(n: int, tracklets) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    for t in tracklets:
        labels[t.rows] = t.id
    return labels


def _check_conservation(n: int, tracklets, dropped: np.ndarray) -> None:
    rows = np.concatenate([t.rows for t in tracklets] + [dropped]) if tracklets else dropped
    if len(rows) != n or not np.array_equal(np.sort(rows), np.arange(n)):
        raise RuntimeError("sample conservation violated")


def _noise_entry(dataset, labels, config, threads, noise_cap):
    keep = labels >= 0
    if not keep.any():
        return None
    clusters = len(np.unique(labels[keep]))
    if clusters > noise_cap:
        return {"skipped": f"{clusters} clusters exceed noise cap {noise_cap}"}
    return overall_noise(dataset.features[keep], labels[keep], config, threads=threads).to_dict()


def run_pipeline(
    dataset: Dataset,
    config: PipelineConfig | None = None,
    stage: str = "all",
    threads: int | None = None,
    noise: bool = True,
    noise_cap: int = NOISE_CAP,
    edge_distances: bool = False,
) -> PipelineResult:
    """Run the denoising stages in order, stopping after ``stage``."""
    config = config or PipelineConfig()
    threads = threads or default_threads()
    if stage not in (*STAGES, "all"):
        raise ValueError(f"unknown stage {stage!r}")
    last = len(STAGES) if stage == "all" else STAGES.index(stage) + 1
    n = len(dataset)
    stages: list[dict] = []
    stage_labels: dict[str, np.ndarray] = {}

    def record(name, t0, tracklets, dropped, **extra):
        labels = _sequence_labels(n, tracklets)
        stage_labels[name] = labels
        _check_conservation(n, tracklets, dropped)
        entry = {
            "name": name,
            "elapsed_ms": (time.perf_counter() - t0) * 1000.0,
            "tracklets": len(tracklets),
            "identities": len(tracklets),
            "samples_kept": int((labels >= 0).sum()),
            "samples_dropped": int(len(dropped)),
            **extra,
        }
        if noise:
            t1 = time.perf_counter()
            entry["noise"] = _noise_entry(dataset, labels, config, threads, noise_cap)
            entry["noise_ms"] = (time.perf_counter() - t1) * 1000.0
        stages.append(entry)
        log.info("stage %s: %d tracklets, %d dropped", name, len(tracklets), len(dropped))

    t0 = time.perf_counter()
    dataset.validate()
    videos = dataset.tracklets()
    current = [t for v in videos for t in v]
    dropped = np.empty(0, dtype=np.int64)
    record("ingest", t0, current, dropped, videos=len(videos))
    graph = None

    if last >= 1:
        t0 = time.perf_counter()

        def tracklet_stage(video) -> list[TrackletDenoiseResult]:
            return [denoise_tracklet(t, config.sigma_cst, config.min_tracklet_size) for t in video]

        per_video = _map(tracklet_stage, videos, threads)
        current = [r.kept for v in per_video for r in v]
        excluded = [r.excluded.rows for v in per_video for r in v]
        dropped = np.concatenate(excluded) if excluded else dropped
        record(
            "tracklet", t0, current, dropped,
            excluded=int(len(dropped)),
            saturated=sum(r.saturated for v in per_video for r in v),
        )

    if last >= 2:
        t0 = time.perf_counter()
        results = _map(lambda v: denoise_video(v, config.sigma_cst, config.sigma_drm), per_video, threads)
        current = [t for r in results for t in r.tracklets]
        dropped = np.concatenate([r.discarded for r in results])
        record(
            "video", t0, current, dropped,
            reallocated=sum(len(r.reallocations) for r in results),
            discarded=int(len(dropped)),
            merges=sum(len(r.merges) for r in results),
        )

    if last >= 3:
        t0 = time.perf_counter()
        current, graph, cmap = denoise_crossvideo(
            current, config.sliding_half_width, config.sigma_drm, threads, edge_distances
        )
        record(
            "cross", t0, current, dropped,
            evaluations=graph.evaluations,
            edges=int(len(graph.edges)),
            closures=cmap.closure_count,
            discarded=int(len(dropped)),
        )
        # closure ids are sequence positions, unique across videos
        stage_labels["cross"] = _id_labels(n, current)

    labels = _id_labels(n, current)
    report = {
        "schema": REPORT_SCHEMA,
        "config": config.to_dict(),
        "stage": stage,
        "threads": threads,
        "input": {
            "samples": n,
            "dim": dataset.dim,
            "videos": len(videos),
            "tracklets": sum(len(v) for v in videos),
        },
        "stages": stages,
        "samples_in": n,
        "samples_out": int((labels >= 0).sum()),
        "samples_discarded": int(len(dropped)),
        "output_identities": len(current),
    }
    return PipelineResult(labels, stage_labels, current, report, graph, dropped)
