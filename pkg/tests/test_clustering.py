import numpy as np
import pytest

from gafvit import clustering
from gafvit.errors import (DegenerateCurve, DimensionMismatch, EmptyInput,
                           LengthMismatch, NonFiniteInput, OutOfRange, ZeroVector)
from gafvit.gaf import FeatureMatrix


def test_endpoint_feature_is_last_row():
    matrix = FeatureMatrix(np.arange(12.0).reshape(4, 3), ("a", "b", "c"))
    end = clustering.endpoint_feature(matrix)
    assert np.array_equal(end, [9.0, 10.0, 11.0])
    end[0] = -1.0  # must be a copy
    assert matrix.values[3, 0] == 9.0


def test_cosine_distance_exact_cases():
    assert clustering.cosine_distance([1.0, 0.0], [0.0, 1.0]) == 0.5
    assert clustering.cosine_distance([1.0, 0.0], [-1.0, 0.0]) == 1.0
    assert clustering.cosine_distance([1.0, 0.0], [1.0, 0.0]) == 0.0
    # arccos amplifies the last-bit rounding of the similarity ratio, so a
    # vector against itself is only near zero in general
    assert clustering.cosine_distance([2.0, 1.0], [2.0, 1.0]) < 1e-7
    d = clustering.cosine_distance([1.0, 0.0], [1.0, 1.0])
    assert abs(d - 0.25) < 1e-15


def test_cosine_distance_scale_invariant_and_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=4)
        b = rng.normal(size=4)
        d = clustering.cosine_distance(a, b)
        assert 0.0 <= d <= 1.0
        assert abs(d - clustering.cosine_distance(3.7 * a, 0.2 * b)) < 1e-12
        assert d == clustering.cosine_distance(b, a)


def test_cosine_distance_literal_variant():
    # the variant cosines the similarity ratio before taking the angle
    a, b = [1.0, 0.0], [0.0, 1.0]
    assert clustering.cosine_distance(a, b, literal_form=True) == 0.0
    d = clustering.cosine_distance([1.0, 0.0], [1.0, 0.0], literal_form=True)
    assert abs(d - np.arccos(np.cos(1.0)) / np.pi) < 1e-15
    assert d != 0.0


def test_cosine_distance_validation():
    with pytest.raises(ZeroVector):
        clustering.cosine_distance([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DimensionMismatch):
        clustering.cosine_distance([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(NonFiniteInput):
        clustering.cosine_distance([np.nan, 1.0], [1.0, 0.0])


def test_quick_bundles_single_and_identical():
    model = clustering.quick_bundles([np.array([1.0, 2.0])], threshold=0.1)
    assert model.n_clusters == 1
    assert np.array_equal(model.assignments, [0])

    feats = [np.array([3.0, 4.0])] * 5
    model = clustering.quick_bundles(feats, threshold=0.01)
    assert model.n_clusters == 1
    assert model.counts == [5]
    assert np.allclose(model.centroids[0], [3.0, 4.0], atol=1e-12)


def test_quick_bundles_two_bundles():
    feats = [np.array(v) for v in ([1.0, 0.0], [0.9, 0.05], [0.0, 1.0],
                                   [0.05, 1.1], [1.1, -0.02])]
    model = clustering.quick_bundles(feats, threshold=0.1)
    assert model.n_clusters == 2
    assert np.array_equal(model.assignments, [0, 0, 1, 1, 0])
    assert model.counts == [3, 2]


def test_quick_bundles_centroid_running_mean():
    feats = [np.array([1.0, 0.0]), np.array([1.0, 0.5]), np.array([1.0, 1.0])]
    model = clustering.quick_bundles(feats, threshold=0.5)
    assert model.n_clusters == 1
    assert np.allclose(model.centroids[0], [1.0, 0.5], atol=1e-15)


def test_quick_bundles_tie_goes_to_lowest_id():
    feats = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    model = clustering.quick_bundles(feats, threshold=0.3)
    # the third vector sits exactly between both centroids (distance 1/4 each)
    assert np.array_equal(model.assignments, [0, 1, 0])
    kind, idx, cid, dist = model.decision_log[2]
    assert (kind, idx, cid) == ("join", 2, 0)
    assert abs(dist - 0.25) < 1e-15


def test_quick_bundles_threshold_inclusive():
    feats = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    model = clustering.quick_bundles(feats, threshold=0.5)
    assert model.n_clusters == 1  # distance is exactly 0.5
    model = clustering.quick_bundles(feats, threshold=0.499)
    assert model.n_clusters == 2


def test_quick_bundles_decision_log_replay():
    # replaying the log against recomputed running centroids must reproduce
    # every decision bit for bit
    rng = np.random.default_rng(1)
    feats = [rng.normal(size=3) + np.array([2.5, 0.0, 0.0]) for _ in range(40)]
    threshold = 0.08
    model = clustering.quick_bundles(feats, threshold)

    centroids = []
    counts = []
    for entry, f in zip(model.decision_log, feats):
        kind, idx, cid, logged_d = entry
        best_id, best_d = -1, np.inf
        for j, c in enumerate(centroids):
            d = clustering.cosine_distance(f, c)
            if d < best_d:
                best_id, best_d = j, d
        if best_id >= 0 and best_d <= threshold:
            assert (kind, cid) == ("join", best_id)
            assert logged_d == best_d
            counts[best_id] += 1
            centroids[best_id] += (f - centroids[best_id]) / counts[best_id]
        else:
            assert kind == "new"
            assert cid == len(centroids)
            centroids.append(f.copy())
            counts.append(1)
    assert model.counts == counts
    assert model.n_clusters == len(centroids)


def test_quick_bundles_validation():
    with pytest.raises(EmptyInput):
        clustering.quick_bundles([], threshold=0.1)
    with pytest.raises(OutOfRange):
        clustering.quick_bundles([np.ones(2)], threshold=-0.01)


def test_cluster_counts_monotone_grid():
    rng = np.random.default_rng(2)
    feats = [rng.normal(size=2) + np.array([4.0, 0.0]) for _ in range(30)]
    feats += [rng.normal(size=2) + np.array([0.0, 4.0]) for _ in range(30)]
    thetas = np.array([0.02, 0.1, 0.3, 0.5])
    counts = clustering.cluster_counts(feats, thetas)
    assert counts.shape == (4,)
    assert np.all(np.diff(counts) <= 0)  # larger radius, never more clusters
    assert counts[-1] <= 2


def test_default_theta_grid():
    grid = clustering.DEFAULT_THETA_GRID
    assert grid[0] == 0.02
    assert grid[-1] == 0.5
    assert len(grid) == 25
    assert np.allclose(np.diff(grid), 0.02, atol=1e-12)


def test_elbow_picks_max_curvature():
    thetas = np.array([0.02, 0.04, 0.06, 0.08, 0.10])
    counts = np.array([10, 4, 4, 3, 2])
    # curvature: 10-8+4=6 at 0.04, 4-8+3=-1, 4-6+2=0
    assert clustering.elbow_threshold(thetas, counts) == 0.04


def test_elbow_tie_takes_smallest_threshold():
    thetas = np.array([0.1, 0.2, 0.3, 0.4])
    counts = np.array([7, 4, 2, 1])
    # curvature is 1 at both interior points
    assert clustering.elbow_threshold(thetas, counts) == 0.2


def test_elbow_degenerate_curves_warn_and_fall_back():
    thetas = np.array([0.1, 0.2, 0.3, 0.4])
    with pytest.warns(DegenerateCurve):
        assert clustering.elbow_threshold(thetas, np.array([3, 3, 3, 3])) == 0.1
    with pytest.warns(DegenerateCurve):
        assert clustering.elbow_threshold(thetas, np.array([5, 4, 3, 2])) == 0.1


def test_elbow_validation():
    with pytest.raises(LengthMismatch):
        clustering.elbow_threshold(np.array([0.1, 0.2]), np.array([1, 2, 3]))
    with pytest.raises(LengthMismatch):
        clustering.elbow_threshold(np.array([0.1, 0.2]), np.array([1, 2]))


def test_renumber_by_size():
    out = clustering.renumber_by_size([2, 2, 0, 1, 1, 1])
    assert np.array_equal(out, [1, 1, 2, 0, 0, 0])
    # count ties break on the original id
    out = clustering.renumber_by_size([5, 5, 3, 3, 8])
    assert np.array_equal(out, [1, 1, 0, 0, 2])


def test_label_dataset_four_direction_endpoints():
    rng = np.random.default_rng(3)
    angles = {0: 0.36, 1: -0.36, 2: 0.13, 3: -0.13}
    matrices = []
    truth = []
    for _ in range(120):
        k = int(rng.integers(0, 4))
        theta = angles[k] + rng.normal(scale=0.029)
        speed = 5.0 + rng.normal(scale=0.2)
        values = rng.normal(size=(20, 2))
        values[-1] = [speed * np.cos(theta), speed * np.sin(theta)]
        matrices.append(FeatureMatrix(values, ("x", "y")))
        truth.append(k)
    result = clustering.label_dataset(matrices)
    assert result.model.n_clusters == 4
    assert sorted(result.summary()) == [0, 1, 2, 3]
    sizes = [result.summary()[i] for i in range(4)]
    assert sizes == sorted(sizes, reverse=True)
    assert clustering.best_label_agreement(result.labels, np.array(truth)) >= 0.95


def test_label_dataset_fixed_threshold_skips_elbow():
    rng = np.random.default_rng(4)
    matrices = []
    for sign in (1.0, -1.0):
        for _ in range(10):
            values = rng.normal(size=(5, 2))
            values[-1] = [3.0, sign * 2.0 + rng.normal(scale=0.05)]
            matrices.append(FeatureMatrix(values, ("x", "y")))
    result = clustering.label_dataset(matrices, threshold=0.2)
    assert result.threshold == 0.2
    assert result.model.n_clusters == 2


def test_best_label_agreement_permutation_invariant():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 4, size=200)
    permuted = (labels + 1) % 4
    assert clustering.best_label_agreement(labels, permuted) == 1.0
    flipped = permuted.copy()
    flipped[:20] = (flipped[:20] + 1) % 4
    assert abs(clustering.best_label_agreement(labels, flipped) - 0.9) < 1e-12
    with pytest.raises(LengthMismatch):
        clustering.best_label_agreement([0, 1], [0, 1, 2])
