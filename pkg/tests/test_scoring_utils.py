import unittest

import numpy as np

from nidlab_errors import HarnessError
from scoring_utils import (
    bin_means,
    clamp,
    make_rng,
    population_mean_std,
    silhouette_score,
    stable_hash,
)


class SilhouetteTests(unittest.TestCase):
    def test_two_tight_pairs(self):
        points = np.array([[0.0, 0.0], [0.0, 0.1], [5.0, 5.0], [5.0, 5.1]])
        self.assertAlmostEqual(silhouette_score(points, ["A", "A", "B", "B"]), 0.98586, places=4)

    def test_identical_points_score_zero(self):
        points = np.zeros((6, 2))
        self.assertEqual(silhouette_score(points, ["A", "B", "C", "A", "B", "C"]), 0.0)

    def test_all_singletons_score_zero(self):
        self.assertEqual(silhouette_score(np.arange(6.0).reshape(3, 2), ["x", "y", "z"]), 0.0)

    def test_separated_clusters_score_high(self):
        rng = make_rng(0)
        labels = ["C1"] * 16 + ["C2"] * 16 + ["C3"] * 16
        centers = np.repeat(np.array([[0.1, 0.1], [0.9, 0.1], [0.5, 0.9]]), 16, axis=0)
        points = centers + rng.normal(scale=0.01, size=centers.shape)
        self.assertGreaterEqual(silhouette_score(points, labels), 0.95)

    def test_random_labels_score_near_zero(self):
        rng = make_rng(1)
        points = rng.uniform(size=(48, 2))
        labels = ["C1", "C2", "C3"] * 16
        self.assertLessEqual(silhouette_score(points, labels), 0.1)

    def test_errors(self):
        with self.assertRaises(HarnessError) as ctx:
            silhouette_score(np.zeros((3, 2)), ["A", "B"])
        self.assertEqual(ctx.exception.code, "shape_mismatch")
        with self.assertRaises(HarnessError) as ctx:
            silhouette_score(np.zeros((3, 2)), ["A", "A", "A"])
        self.assertEqual(ctx.exception.code, "single_label")


class HelperTests(unittest.TestCase):
    def test_clamp(self):
        self.assertEqual(clamp(-1, 0, 11), 0)
        self.assertEqual(clamp(12, 0, 11), 11)
        self.assertEqual(clamp(5, 0, 11), 5)

    def test_streams_are_independent_and_repeatable(self):
        self.assertEqual(make_rng(3, 1).integers(1 << 30), make_rng(3, 1).integers(1 << 30))
        first = make_rng(3, 1).uniform(size=4)
        other = make_rng(3, 2).uniform(size=4)
        self.assertFalse(np.allclose(first, other))

    def test_population_std_divides_by_n(self):
        mean, std = population_mean_std(np.array([[1.0], [3.0]]))
        self.assertEqual(mean[0], 2.0)
        self.assertEqual(std[0], 1.0)

    def test_bin_means_keep_partial_tail(self):
        self.assertEqual(bin_means([1.0, 2.0, 3.0, 4.0, 5.0], 2), [1.5, 3.5, 5.0])
        with self.assertRaises(HarnessError):
            bin_means([1.0], 0)

    def test_stable_hash_ignores_key_order(self):
        self.assertEqual(stable_hash({"a": 1, "b": [2, 3]}), stable_hash({"b": [2, 3], "a": 1}))
        self.assertNotEqual(stable_hash({"a": 1}), stable_hash({"a": 2}))


if __name__ == "__main__":
    unittest.main()
