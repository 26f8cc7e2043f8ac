from itertools import permutations

import numpy as np
import pytest

from mvcca.errors import (
    DisconnectedGraphWarning,
    LengthMismatchError,
    SingleClassError,
    TooFewSamplesError,
)
from mvcca.evaluation import (
    clustering_accuracy,
    linear_svm_ovo,
    nmi,
    spectral_cluster,
)


def brute_force_accuracy(truth, pred):
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    t_vals = np.unique(truth)
    p_vals = np.unique(pred)
    size = max(len(t_vals), len(p_vals))
    best = 0
    for perm in permutations(range(size)):
        correct = 0
        for i, p in enumerate(p_vals):
            j = perm[i]
            if j < len(t_vals):
                correct += int(((pred == p) & (truth == t_vals[j])).sum())
        best = max(best, correct)
    return best / len(truth)


def two_blobs(rng, n_per=60, sep=8.0):
    a = rng.standard_normal((2, n_per))
    b = rng.standard_normal((2, n_per)) + np.array([[sep], [0.0]])
    points = np.concatenate([a, b], axis=1)
    labels = np.array([0] * n_per + [1] * n_per)
    return points, labels


class TestSpectralCluster:
    def test_two_separated_blobs(self, rng):
        points, labels = two_blobs(rng)
        result = spectral_cluster(points, 2, k_neighbors=10, seed=0)
        assert clustering_accuracy(labels, result.assignments) == 1.0

    def test_concentric_rings(self, rng):
        # Non-convex clusters: an inner and an outer ring.
        n = 150
        theta_in = rng.uniform(0, 2 * np.pi, n)
        theta_out = rng.uniform(0, 2 * np.pi, n)
        inner = np.vstack([np.cos(theta_in), np.sin(theta_in)])
        inner += 0.05 * rng.standard_normal((2, n))
        outer = 3.0 * np.vstack([np.cos(theta_out), np.sin(theta_out)])
        outer += 0.05 * rng.standard_normal((2, n))
        points = np.concatenate([inner, outer], axis=1)
        labels = np.array([0] * n + [1] * n)
        result = spectral_cluster(points, 2, k_neighbors=10, seed=0)
        assert clustering_accuracy(labels, result.assignments) >= 0.95

    def test_sample_count_equal_to_clusters(self, rng):
        points = rng.standard_normal((2, 5))
        result = spectral_cluster(points, 5, k_neighbors=2, seed=0)
        assert sorted(result.assignments) == list(range(5))

    def test_too_few_samples(self, rng):
        with pytest.raises(TooFewSamplesError):
            spectral_cluster(rng.standard_normal((2, 3)), 4, 1, seed=0)

    def test_disconnected_graph_warns_and_separates(self, rng):
        points, labels = two_blobs(rng, n_per=30, sep=50.0)
        with pytest.warns(DisconnectedGraphWarning):
            result = spectral_cluster(points, 2, k_neighbors=3, seed=0)
        assert clustering_accuracy(labels, result.assignments) == 1.0

    def test_deterministic(self, rng):
        points, _ = two_blobs(rng, n_per=40, sep=3.0)
        a = spectral_cluster(points, 2, k_neighbors=8, seed=5)
        b = spectral_cluster(points, 2, k_neighbors=8, seed=5)
        np.testing.assert_array_equal(a.assignments, b.assignments)


class TestClusteringAccuracy:
    def test_identical(self):
        assert clustering_accuracy([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0

    def test_worked_example(self):
        truth = [0, 0, 1, 1, 2, 2]
        pred = [1, 1, 0, 0, 0, 2]
        assert clustering_accuracy(truth, pred) == pytest.approx(5 / 6)
        assert brute_force_accuracy(truth, pred) == pytest.approx(5 / 6)

    def test_constant_prediction_balanced_classes(self):
        truth = np.repeat(np.arange(10), 10)
        pred = np.zeros(100, dtype=int)
        assert clustering_accuracy(truth, pred) == pytest.approx(0.1)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(5, 40))
            truth = rng.integers(0, k, size=n)
            pred = rng.integers(0, k, size=n)
            assert clustering_accuracy(truth, pred) == pytest.approx(
                brute_force_accuracy(truth, pred))

    def test_permutation_invariance(self, rng):
        truth = rng.integers(0, 4, size=50)
        pred = rng.integers(0, 4, size=50)
        base = clustering_accuracy(truth, pred)
        base_nmi = nmi(truth, pred)
        for _ in range(10):
            mapping = rng.permutation(4)
            relabeled = mapping[pred]
            assert clustering_accuracy(truth, relabeled) == pytest.approx(base)
            assert nmi(truth, relabeled) == pytest.approx(base_nmi)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            clustering_accuracy([0, 1], [0, 1, 2])


class TestNmi:
    def test_identical_partitions(self):
        assert nmi([0, 1, 0, 2], [5, 7, 5, 9]) == pytest.approx(1.0)

    def test_constant_prediction_is_zero(self):
        assert nmi([0, 1, 0, 1], [3, 3, 3, 3]) == 0.0

    def test_independent_partitions(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_contingency(self):
        # Contingency [[2,1],[0,3]]: worked out with base-2 logs by hand.
        truth = [0, 0, 0, 1, 1, 1]
        pred = [0, 0, 1, 1, 1, 1]
        n = 6.0
        joint = np.array([[2, 1], [0, 3]]) / n
        pt = joint.sum(1)
        pp = joint.sum(0)
        mi = sum(
            joint[i, j] * np.log2(joint[i, j] / (pt[i] * pp[j]))
            for i in range(2) for j in range(2) if joint[i, j] > 0
        )
        h = max(-(pt * np.log2(pt)).sum(), -(pp * np.log2(pp)).sum())
        assert nmi(truth, pred) == pytest.approx(mi / h, abs=1e-12)

    def test_matches_hand_computation_on_random_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(6, 60))
            truth = rng.integers(0, 4, size=n)
            pred = rng.integers(0, 3, size=n)
            # independent plug-in computation from the raw counts
            classes_t = np.unique(truth)
            classes_p = np.unique(pred)
            joint = np.zeros((len(classes_t), len(classes_p)))
            for i, ct in enumerate(classes_t):
                for j, cp in enumerate(classes_p):
                    joint[i, j] = ((truth == ct) & (pred == cp)).sum() / n
            pt, pp = joint.sum(1), joint.sum(0)
            mi = sum(
                joint[i, j] * np.log2(joint[i, j] / (pt[i] * pp[j]))
                for i in range(len(classes_t)) for j in range(len(classes_p))
                if joint[i, j] > 0
            )
            hmax = max(-(pt * np.log2(pt)).sum(), -(pp * np.log2(pp)).sum())
            expected = 0.0 if hmax == 0 else mi / hmax
            assert nmi(truth, pred) == pytest.approx(expected, abs=1e-12)

    def test_symmetry_same_label_count(self, rng):
        truth = rng.integers(0, 3, size=40)
        pred = rng.integers(0, 3, size=40)
        assert nmi(truth, pred) == pytest.approx(nmi(pred, truth), abs=1e-12)


class TestLinearSvmOvo:
    def test_separable_two_class(self, rng):
        points, labels = two_blobs(rng, n_per=50, sep=10.0)
        result = linear_svm_ovo(points, labels, points, labels, points, labels,
                                c_grid=(1.0,), seed=0)
        assert result.error == 0.0

    def test_shuffled_labels_chance_level(self, rng):
        n = 3000
        x = rng.standard_normal((5, n))
        labels = rng.integers(0, 10, size=n)
        split = n // 3
        result = linear_svm_ovo(
            x[:, :split], labels[:split],
            x[:, split:2 * split], labels[split:2 * split],
            x[:, 2 * split:], labels[2 * split:],
            c_grid=(1.0,), seed=0,
        )
        assert result.error == pytest.approx(0.9, abs=0.03)

    def test_penalty_selected_on_tune_split(self, rng):
        points, labels = two_blobs(rng, n_per=60, sep=2.0)
        result = linear_svm_ovo(points, labels, points, labels, points, labels,
                                c_grid=(0.01, 1.0), seed=0)
        assert result.c in (0.01, 1.0)

    def test_single_class_rejected(self, rng):
        x = rng.standard_normal((3, 10))
        ones = np.ones(10, dtype=int)
        with pytest.raises(SingleClassError):
            linear_svm_ovo(x, ones, x, ones, x, ones)
