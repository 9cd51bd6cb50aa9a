import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idcorr.core import Tracklet, centroid
from idcorr.tracklet_denoise import TrackletDenoiseResult, denoise_tracklet
from idcorr.video_denoise import denoise_video, merge_video_tracklets, reallocate

import oracles

E = np.eye(4)


def tracklet(tid, X, row0):
    X = np.asarray(X, dtype=np.float64)
    return Tracklet(tid, X, np.arange(len(X)), np.arange(row0, row0 + len(X)))


def result(kept: Tracklet, excluded_X, row0):
    exc = tracklet(kept.id, np.asarray(excluded_X, dtype=np.float64).reshape(-1, kept.dim), row0)
    return TrackletDenoiseResult(kept, exc, len(exc))


def seeded_video(rng, n_tracklets=3, dim=6, m=12, contamination=3):
    dirs = rng.normal(size=(n_tracklets, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    out, row = [], 0
    for k in range(n_tracklets):
        who = np.full(m, k)
        who[:contamination] = rng.integers(0, n_tracklets, size=contamination)
        X = dirs[who] + 0.05 * rng.normal(size=(m, dim))
        out.append(denoise_tracklet(tracklet(10 + k, X, row), 0.2))
        row += m
    return out


class TestReallocate:
    def test_sample_at_other_centroid_moves(self):
        a = tracklet(0, [E[0], E[0]], 0)
        b = tracklet(1, [E[1], E[1]], 10)
        video = [result(a, [E[1]], 2), result(b, [], 12)]
        tracklets, discarded, moves = reallocate(video, 0.2)
        assert moves == [(2, 0, 1)]
        assert tracklets[1].rows.tolist() == [10, 11, 2]
        assert len(discarded) == 0

    def test_orthogonal_sample_discarded(self):
        a = tracklet(0, [E[0]], 0)
        b = tracklet(1, [E[1]], 10)
        video = [result(a, [E[2]], 2), result(b, [], 12)]
        _, discarded, moves = reallocate(video, 0.2)
        assert discarded.tolist() == [2] and moves == []

    def test_never_returns_to_origin(self):
        a = tracklet(0, [E[0]], 0)
        b = tracklet(1, [E[1]], 10)
        _, discarded, _ = reallocate([result(a, [E[0]], 2), result(b, [], 12)], 0.2)
        assert discarded.tolist() == [2]

    def test_single_tracklet_discards_all(self):
        a = tracklet(0, [E[0]], 0)
        _, discarded, _ = reallocate([result(a, [E[0], E[1]], 2)], 0.2)
        assert discarded.tolist() == [2, 3]

    def test_tie_goes_to_lowest_id(self):
        x = (E[0] + E[1]) / np.sqrt(2)
        a = tracklet(5, [E[0]], 0)
        b = tracklet(3, [E[1]], 10)
        c = tracklet(7, [E[2]], 20)
        video = [result(c, [x], 30), result(a, [], 40), result(b, [], 50)]
        _, _, moves = reallocate(video, 0.5)
        assert moves == [(30, 7, 3)]

    @pytest.mark.parametrize("seed", range(8))
    def test_seeded_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        video = seeded_video(rng)
        _, discarded, moves = reallocate(video, 0.2)
        cents = [centroid(r.kept.features).tolist() for r in video]
        ids = [r.kept.id for r in video]
        excluded, origin, rows = [], [], []
        for r in video:
            excluded += r.excluded.features.tolist()
            origin += [r.kept.id] * len(r.excluded)
            rows += r.excluded.rows.tolist()
        want = oracles.reallocate(excluded, origin, cents, ids, 0.2)
        got = {row: to for row, _, to in moves}
        for row, target in zip(rows, want):
            if target is None:
                assert row in discarded.tolist()
            else:
                assert got[row] == target

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
    def test_order_independent(self, seed, rnd):
        rng = np.random.default_rng(seed)
        video = seeded_video(rng, n_tracklets=4)
        _, d1, m1 = reallocate(video, 0.2)
        shuffled = []
        for r in video:
            perm = list(range(len(r.excluded)))
            rnd.shuffle(perm)
            shuffled.append(TrackletDenoiseResult(r.kept, r.excluded.subset(perm), r.iterations))
        _, d2, m2 = reallocate(shuffled, 0.2)
        assert sorted(d1.tolist()) == sorted(d2.tolist())
        assert sorted(m1) == sorted(m2)


class TestMerge:
    def test_identical_centroids_merge(self):
        r = merge_video_tracklets([tracklet(4, [E[0]], 0), tracklet(2, [E[0]], 1)], 0.18)
        assert len(r.tracklets) == 1 and r.tracklets[0].id == 2
        assert r.merges == [{2, 4}]
        assert r.tracklets[0].rows.tolist() == [0, 1]

    def test_orthogonal_untouched(self):
        ts = [tracklet(k, [E[k]], k) for k in range(3)]
        r = merge_video_tracklets(ts, 0.18)
        assert [t.rows.tolist() for t in r.tracklets] == [[0], [1], [2]]
        assert r.merges == [] and r.merge_passes == 1

    def test_chain_closure(self):
        angles = [0.0, 0.5, 1.0]  # A-B, B-C close; A-C far at sigma 0.15
        X = [[np.cos(a), np.sin(a)] for a in angles]
        assert oracles.cos_dist(X[0], X[2]) > 0.15 > oracles.cos_dist(X[0], X[1])
        r = merge_video_tracklets([tracklet(k, [X[k]], k) for k in range(3)], 0.15)
        assert len(r.tracklets) == 1 and r.merges == [{0, 1, 2}]

    def test_second_pass_merges_moved_centroids(self):
        # P and Q are close; R sits off-plane near their mean but far from each
        sigma = 0.18
        theta = np.arccos(1 - sigma) * 0.99
        p = [np.cos(theta / 2), np.sin(theta / 2), 0.0]
        q = [np.cos(theta / 2), -np.sin(theta / 2), 0.0]
        r_ = [np.cos(theta), 0.0, np.sin(theta)]
        assert oracles.cos_dist(p, q) < sigma
        assert oracles.cos_dist(p, r_) > sigma and oracles.cos_dist(q, r_) > sigma
        assert oracles.cos_dist(oracles.mean([p, q]), r_) < sigma
        ts = [tracklet(0, [p], 0), tracklet(1, [q], 1), tracklet(2, [r_], 2)]
        single = merge_video_tracklets(ts, sigma, until_fixpoint=False)
        assert [t.rows.tolist() for t in single.tracklets] == [[0, 1], [2]]
        full = merge_video_tracklets(ts, sigma)
        assert [t.rows.tolist() for t in full.tracklets] == [[0, 1, 2]]
        assert full.merge_passes == 3 and full.merges == [{0, 1, 2}]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.sampled_from([0.1, 0.18, 0.4]))
    def test_separation_and_conservation(self, seed, n, sigma):
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(3, 5))
        ts = [tracklet(k, base[rng.integers(3)] + 0.4 * rng.normal(size=(3, 5)), 3 * k) for k in range(n)]
        r = merge_video_tracklets(ts, sigma)
        rows = sorted(np.concatenate([t.rows for t in r.tracklets]).tolist())
        assert rows == list(range(3 * n))
        owner = {}
        for out_pos, t in enumerate(r.tracklets):
            for row in t.rows.tolist():
                owner[row // 3] = out_pos
        # no pre-merge link joins two different output tracklets
        C = [centroid(t.features).tolist() for t in ts]
        for p in range(n):
            for q in range(p + 1, n):
                if oracles.step(sigma - oracles.cos_dist(C[p], C[q])):
                    assert owner[p] == owner[q]
        # fixpoint: output centroids are pairwise apart
        out = [centroid(t.features).tolist() for t in r.tracklets]
        for p in range(len(out)):
            for q in range(p + 1, len(out)):
                assert oracles.cos_dist(out[p], out[q]) > sigma
        # merge ids are the smallest member id
        for t, group in zip(r.tracklets, [sorted({row // 3 for row in t.rows.tolist()}) for t in r.tracklets]):
            assert t.id == group[0]


def test_denoise_video_conserves_samples():
    rng = np.random.default_rng(11)
    video = seeded_video(rng, n_tracklets=4, contamination=4)
    r = denoise_video(video, 0.2, 0.18)
    rows = np.concatenate([t.rows for t in r.tracklets] + [r.discarded])
    assert sorted(rows.tolist()) == list(range(4 * 12))
    for m in r.merges:
        assert len(m) >= 2
