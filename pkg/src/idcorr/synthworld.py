"""Synthetic video worlds with planted identities, plus oracles and recovery metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Dataset, PipelineConfig, centroid
from .crossvideo_denoise import LinkGraph, closures
from .linking import close_pairs
from .errors import InstanceTooLarge, InvalidSpec, UniverseMismatch
from .noise_metrics import NoiseReport, overall_noise
from .tracklet_denoise import denoise_tracklet
from .video_denoise import reallocate

DISCARDED = -1


@dataclass(frozen=True)
class WorldSpec:
    n_identities: int = 10
    n_videos: int = 5
    tracklets_per_video: int = 4
    samples_per_tracklet: int = 20
    dim: int = 32
    intra_spread: float = 0.25
    contamination_rate: float = 0.15
    cross_video_recurrence: float = 0.5
    seed: int = 0
    # Recurring identities are drawn only from the last ``lookback`` videos.
    recurrence_lookback: int | None = None

    def validate(self) -> None:
        for name in ("n_identities", "n_videos", "tracklets_per_video", "samples_per_tracklet", "dim"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        for name in ("contamination_rate", "cross_video_recurrence"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidSpec(f"{name} must lie in [0, 1]")
        if self.intra_spread < 0:
            raise InvalidSpec("intra_spread must be >= 0")
        if self.tracklets_per_video > self.n_identities:
            raise InvalidSpec("a video cannot hold more tracklets than there are identities")
        if self.cross_video_recurrence == 0 and (
            self.n_videos * self.tracklets_per_video > self.n_identities
        ):
            raise InvalidSpec("recurrence 0 needs one fresh identity per tracklet")
        if self.recurrence_lookback is not None and self.recurrence_lookback < 1:
            raise InvalidSpec("recurrence_lookback must be >= 1")

    @property
    def n_samples(self) -> int:
        return self.n_videos * self.tracklets_per_video * self.samples_per_tracklet


@dataclass
class World:
    spec: WorldSpec
    dataset: Dataset
    identity: np.ndarray  # per sample
    tracklet_identity: np.ndarray  # primary identity per tracklet, in sequence order
    directions: np.ndarray

    @property
    def initial_labels(self) -> np.ndarray:
        return self.dataset.tracklet_ids.copy()


def _assign_identities(spec: WorldSpec, rng: np.random.Generator) -> np.ndarray:
    fresh = list(rng.permutation(spec.n_identities))
    seen_at: dict[int, int] = {}
    table = np.empty((spec.n_videos, spec.tracklets_per_video), dtype=np.int64)
    for v in range(spec.n_videos):
        in_video: set[int] = set()
        for k in range(spec.tracklets_per_video):
            recent = [
                p for p, last in seen_at.items()
                if p not in in_video
                and (spec.recurrence_lookback is None or v - last <= spec.recurrence_lookback)
            ]
            recur = rng.random() < spec.cross_video_recurrence
            if fresh and (not recur or not recent):
                pick = int(fresh.pop())
            elif recent:
                pick = int(recent[rng.integers(len(recent))])
            else:
                pool = [p for p in range(spec.n_identities) if p not in in_video]
                pick = int(pool[rng.integers(len(pool))])
            in_video.add(pick)
            table[v, k] = pick
        for p in in_video:
            seen_at[p] = v
    return table


def generate(spec: WorldSpec) -> World:
    """Build a world; fully determined by ``spec`` (including its seed).

    Identities are random unit directions. A sample is its identity direction
    plus Gaussian noise of norm about ``intra_spread``, renormalized.
    Contamination replaces ``round(rate * samples)`` samples of each tracklet
    with samples of one other identity, preferably one tracked elsewhere in
    the same video (an identity switch).
    """
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    world_seq, *track_seqs = root.spawn(1 + spec.n_videos * spec.tracklets_per_video)
    rng = np.random.default_rng(world_seq)
    dirs = rng.normal(size=(spec.n_identities, spec.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    table = _assign_identities(spec, rng)

    S, T = spec.samples_per_tracklet, spec.tracklets_per_video
    n_bad = int(round(spec.contamination_rate * S))
    feats = np.empty((spec.n_samples, spec.dim), dtype=np.float32)
    identity = np.empty(spec.n_samples, dtype=np.int64)
    for v in range(spec.n_videos):
        for k in range(T):
            t = v * T + k
            trng = np.random.default_rng(track_seqs[t])
            who = np.full(S, table[v, k])
            if n_bad:
                others = [p for p in table[v] if p != table[v, k]]
                if not others:
                    others = [p for p in range(spec.n_identities) if p != table[v, k]]
                if others:
                    intruder = others[trng.integers(len(others))]
                    who[trng.choice(S, size=n_bad, replace=False)] = intruder
            noise = trng.normal(size=(S, spec.dim)) * (spec.intra_spread / np.sqrt(spec.dim))
            x = dirs[who] + noise
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            feats[t * S : (t + 1) * S] = x
            identity[t * S : (t + 1) * S] = who
    n = spec.n_samples
    tracklet = np.repeat(np.arange(spec.n_videos * T), S)
    dataset = Dataset(
        feats,
        video_ids=tracklet // T,
        tracklet_ids=tracklet,
        frames=np.tile(np.arange(S), n // S),
        meta={"world": asdict(spec)},
    )
    return World(spec, dataset, identity, table.reshape(-1), dirs)


def chain_within_window(tracklet_identity, half_width: int) -> bool:
    """True if consecutive same-identity tracklets are never more than ``half_width`` apart."""
    tid = np.asarray(tracklet_identity)
    for p in np.unique(tid):
        pos = np.flatnonzero(tid == p)
        if len(pos) > 1 and np.diff(pos).max() > half_width:
            return False
    return True


def brute_force_correlate(
    dataset: Dataset, config: PipelineConfig | None = None, max_tracklets: int = 5000
) -> np.ndarray:
    """Reference correlation: the whole set treated as one video, all pairs linked.

    Returns one label per row (``DISCARDED`` for dropped samples); labels are
    the smallest tracklet position of each closure.
    """
    config = config or PipelineConfig()
    tracklets = [t for video in dataset.tracklets() for t in video]
    if len(tracklets) > max_tracklets:
        raise InstanceTooLarge(f"{len(tracklets)} tracklets exceed the cap of {max_tracklets}")
    # positions double as ids so reallocation ties resolve by sequence order
    for pos, t in enumerate(tracklets):
        t.id = pos
    results = [denoise_tracklet(t, config.sigma_cst, config.min_tracklet_size) for t in tracklets]
    merged, discarded, _ = reallocate(results, config.sigma_cst)
    cents = np.stack([centroid(t.features) for t in merged])
    pairs, n_eval = close_pairs(cents, config.sigma_drm)
    cmap = closures(LinkGraph(len(merged), pairs, n_eval))
    labels = np.full(len(dataset), DISCARDED, dtype=np.int64)
    for t, cid in zip(merged, cmap.assignment.tolist()):
        labels[t.rows] = cid
    return labels


@dataclass
class EvalReport:
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f1: float
    cluster_purity: float
    identity_count_found: int
    identity_count_true: int
    discarded: int = 0
    noise_before: NoiseReport | None = None
    noise_after: NoiseReport | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "schema": "idcorr.eval_report/1",
            "pairwise_precision": self.pairwise_precision,
            "pairwise_recall": self.pairwise_recall,
            "pairwise_f1": self.pairwise_f1,
            "cluster_purity": self.cluster_purity,
            "identity_count_found": self.identity_count_found,
            "identity_count_true": self.identity_count_true,
            "discarded": self.discarded,
            "noise_before": self.noise_before.to_dict() if self.noise_before else None,
            "noise_after": self.noise_after.to_dict() if self.noise_after else None,
        }
        out.update(self.extra)
        return out


def _singletons_for_discarded(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).copy()
    gone = labels < 0
    if gone.any():
        base = labels.max(initial=-1) + 1
        labels[gone] = base + np.arange(gone.sum())
    return labels


def _pairs(counts: np.ndarray) -> int:
    counts = counts.astype(np.int64)
    return int((counts * (counts - 1) // 2).sum())


def evaluate(
    predicted,
    truth,
    config: PipelineConfig | None = None,
    features=None,
    initial=None,
) -> EvalReport:
    """Pairwise precision/recall/F1 and purity of a predicted labeling.

    Negative predicted labels mark discarded samples; each counts as its own
    cluster. With ``features`` given, the noise of ``initial`` (or of the
    truth when ``initial`` is None) and of the prediction are attached.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise UniverseMismatch(f"{predicted.shape[0]} predicted vs {truth.shape[0]} true labels")
    n_discarded = int((predicted < 0).sum())
    pred = _singletons_for_discarded(predicted)
    _, p_inv = np.unique(pred, return_inverse=True)
    _, t_inv = np.unique(truth, return_inverse=True)
    n_t = int(t_inv.max()) + 1 if len(t_inv) else 0
    joint = p_inv.astype(np.int64) * max(n_t, 1) + t_inv
    _, joint_counts = np.unique(joint, return_counts=True)
    tp = _pairs(joint_counts)
    pred_pairs = _pairs(np.bincount(p_inv))
    true_pairs = _pairs(np.bincount(t_inv))
    precision = tp / pred_pairs if pred_pairs else 1.0
    recall = tp / true_pairs if true_pairs else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    overlap_max = np.zeros(int(p_inv.max()) + 1 if len(p_inv) else 0, dtype=np.int64)
    uniq_joint, joint_counts = np.unique(joint, return_counts=True)
    np.maximum.at(overlap_max, uniq_joint // max(n_t, 1), joint_counts)
    purity = float(overlap_max.sum() / len(pred)) if len(pred) else 1.0

    found = len(np.unique(predicted[predicted >= 0]))
    report = EvalReport(
        precision, recall, f1, purity, found, len(np.unique(truth)), n_discarded
    )
    if features is not None:
        features = np.asarray(features)
        ref = truth if initial is None else np.asarray(initial)
        report.noise_before = overall_noise(features, ref, config)
        keep = predicted >= 0
        if keep.any():
            report.noise_after = overall_noise(features[keep], predicted[keep], config)
    return report
