import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from idcorr.core import (
    Dataset,
    Hypersphere,
    PipelineConfig,
    Sample,
    Tracklet,
    as_feature,
    centroid,
    centroid_distance,
    distance,
    distance_matrix,
    group_centroids,
    unit_step,
)
from idcorr.errors import (
    DimensionMismatch,
    EmptySet,
    InvalidConfig,
    NonFiniteValues,
    ZeroNormVector,
)

import oracles

e1 = np.array([1.0, 0.0, 0.0])
e2 = np.array([0.0, 1.0, 0.0])

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vectors(dim):
    return arrays(np.float64, dim, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


class TestDistance:
    def test_identity(self):
        assert distance(e1, e1) == 0.0

    def test_orthogonal(self):
        assert distance(e1, e2) == 1.0

    def test_antipodal(self):
        assert distance(e1, -e1) == 2.0

    def test_zero_norm_rejected(self):
        with pytest.raises(ZeroNormVector):
            distance(e1, np.zeros(3))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            distance(e1, np.ones(2))

    def test_degenerate_centroid_maps_to_two(self):
        c = centroid([e1, -e1])
        assert centroid_distance(e2, c) == 2.0

    @given(st.integers(1, 8).flatmap(lambda d: st.tuples(vectors(d), vectors(d))))
    def test_symmetric_nonnegative(self, ab):
        a, b = ab
        assert distance(a, b) == distance(b, a)
        assert 0.0 <= distance(a, b) <= 2.0

    @given(st.integers(1, 8).flatmap(lambda d: st.tuples(vectors(d), vectors(d))))
    def test_matches_scalar_oracle(self, ab):
        a, b = ab
        assert distance(a, b) == pytest.approx(oracles.cos_dist(a, b), abs=1e-12)

    @given(st.integers(1, 8).flatmap(lambda d: st.tuples(vectors(d), vectors(d))))
    def test_unit_vectors_half_squared_euclidean(self, ab):
        a, b = (v / np.linalg.norm(v) for v in ab)
        assert distance(a, b) == pytest.approx(0.5 * np.sum((a - b) ** 2), abs=1e-9)

    def test_distance_matrix_matches_scalar(self):
        rng = np.random.default_rng(3)
        X, C = rng.normal(size=(7, 5)), rng.normal(size=(4, 5))
        C[2] = 0.0
        D = distance_matrix(X, C)
        for i in range(7):
            for j in range(4):
                assert D[i, j] == pytest.approx(centroid_distance(X[i], C[j]), abs=1e-12)
        assert np.all(D[:, 2] == 2.0)


class TestCentroid:
    def test_singleton(self):
        assert np.array_equal(centroid([e1]), e1)

    def test_duplicates(self):
        assert np.array_equal(centroid([e1, e1]), e1)

    def test_arithmetic(self):
        assert np.array_equal(centroid([(1, 0), (0, 1)]), [0.5, 0.5])

    def test_not_renormalized(self):
        assert np.linalg.norm(centroid([e1, e2])) == pytest.approx(math.sqrt(0.5))

    def test_empty(self):
        with pytest.raises(EmptySet):
            centroid([])

    @given(arrays(np.float64, (6, 3), elements=finite), st.permutations(range(6)))
    def test_permutation_invariant(self, X, perm):
        np.testing.assert_allclose(centroid(X), centroid(X[list(perm)]), rtol=0, atol=1e-12)

    def test_float32_accumulates_in_double(self):
        X = np.full((3, 2), 0.1, dtype=np.float32)
        assert centroid(X).dtype == np.float64

    def test_group_centroids(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 4))
        y = rng.integers(0, 5, size=30) * 10
        uniq, C, inv = group_centroids(X, y)
        for k, label in enumerate(uniq):
            np.testing.assert_allclose(C[k], X[y == label].mean(axis=0), atol=1e-12)
        assert np.array_equal(uniq[inv], y)


class TestUnitStep:
    @pytest.mark.parametrize("x, want", [(0.0, 1), (-0.01, 0), (0.5, 1)])
    def test_values(self, x, want):
        assert unit_step(x) == want


class TestTypes:
    def test_hypersphere_singleton(self):
        h = Hypersphere.enclosing([e1])
        assert np.array_equal(h.centroid, e1) and h.radius == 0.0

    @given(arrays(np.float64, (5, 3), elements=finite).filter(
        lambda X: np.all(np.linalg.norm(X, axis=1) > 1e-3)))
    def test_hypersphere_radius_bounds(self, X):
        assert 0.0 <= Hypersphere.enclosing(X).radius <= 2.0

    def test_feature_validation(self):
        assert as_feature([1, 2], dim=2).dtype == np.float64
        with pytest.raises(DimensionMismatch):
            as_feature([1, 2], dim=3)
        with pytest.raises(NonFiniteValues):
            as_feature([1, np.nan])
        with pytest.raises(ValueError):
            as_feature([1, 1], normalized=True)
        as_feature([0.6, 0.8], normalized=True)

    @pytest.mark.parametrize(
        "kwargs",
        [{"sigma_cst": 0}, {"sigma_cst": 2.5}, {"sigma_drm": -1}, {"sliding_half_width": 0}],
    )
    def test_config_invariants(self, kwargs):
        with pytest.raises(InvalidConfig):
            PipelineConfig(**kwargs)

    def test_config_defaults(self):
        c = PipelineConfig()
        assert (c.sigma_cst, c.sigma_drm, c.sliding_half_width) == (0.2, 0.18, 1000)

    def test_tracklet_from_samples(self):
        samples = [Sample(e1, 3, 7, f) for f in range(4)]
        t = Tracklet.from_samples(samples)
        assert t.id == 7 and t.label == 7 and t.video_id == 3 and len(t) == 4
        assert [s.key for s in t.samples] == [(3, 7, f) for f in range(4)]
        with pytest.raises(ValueError):
            Tracklet.from_samples(samples + [Sample(e1, 3, 8, 9)])

    def test_dataset_grouping_order(self):
        # video 5 appears first, so it comes first; tracklets sorted by id
        rows = [(5, 2, 0), (1, 0, 0), (5, 1, 0), (5, 2, 1), (1, 0, 1)]
        X = np.eye(5)
        ds = Dataset(X, *zip(*rows))
        videos = ds.tracklets()
        assert [[t.id for t in v] for v in videos] == [[1, 2], [0]]
        assert [t.video_id for t in videos[0]] == [5, 5]
        assert videos[0][1].rows.tolist() == [0, 3]
        assert videos[1][0].rows.tolist() == [1, 4]

    def test_dataset_validation(self):
        ds = Dataset(np.eye(2), [0, 0], [0, 0], [1, 1])
        with pytest.raises(ValueError):
            ds.validate()
        ds = Dataset(np.zeros((1, 2)), [0], [0], [0])
        with pytest.raises(ZeroNormVector):
            ds.validate()
