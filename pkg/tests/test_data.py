import csv
import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from factsim.config_models import AffineTransform, BaseTask, DomainSpec
from factsim.data import Dataset, apply_transform, make_domain, split_domain, train_test_split
from factsim.utils import ConfigurationError, InputError


class TestDataset(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(InputError):
            Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), "d", num_classes=2)
        with self.assertRaises(InputError):
            Dataset(np.zeros((3, 2)), np.array([0, 1]), "d", num_classes=2)
        with self.assertRaises(InputError):
            Dataset(np.zeros((0, 2)), None, "d")

    def test_unlabeled_and_subset(self):
        ds = Dataset(np.arange(8.0).reshape(4, 2), np.array([0, 1, 0, 1]), "d", 2)
        self.assertFalse(ds.unlabeled().labeled)
        part = ds.subset([1, 3])
        assert_array_equal(part.features, [[2.0, 3.0], [6.0, 7.0]])
        assert_array_equal(part.class_counts(), [0, 2])

    def test_to_csv(self):
        ds = Dataset(np.array([[0.1, 0.2], [1.0 / 3.0, 4.0]]), np.array([1, 0]), "d", 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "d.csv")
            ds.to_csv(path)
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["f0", "f1", "label"])
        self.assertEqual(float(rows[2][0]), 1.0 / 3.0)
        self.assertEqual(rows[1][2], "1")

    def test_unlabeled_csv_has_empty_labels(self):
        ds = Dataset(np.zeros((2, 1)), None, "t", 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "t.csv")
            ds.to_csv(path)
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        self.assertEqual([r[-1] for r in rows[1:]], ["", ""])


class TestMakeDomain(unittest.TestCase):
    def test_balanced_and_deterministic(self):
        spec = DomainSpec(name="a", n_samples=1200, seed=5)
        ds = make_domain(spec)
        self.assertEqual(len(ds), 1200)
        assert_array_equal(ds.class_counts(), [400, 400, 400])
        again = make_domain(spec)
        assert_array_equal(ds.features, again.features)

    def test_transform_does_not_consume_randomness(self):
        plain = make_domain(DomainSpec(name="a", n_samples=300, seed=9))
        rotated = make_domain(DomainSpec(name="b", n_samples=300, seed=9,
                                         transform=AffineTransform(rotation_deg=90.0)))
        assert_array_equal(plain.labels, rotated.labels)
        expected = plain.features @ np.array([[0.0, 1.0], [-1.0, 0.0]])
        assert_allclose(rotated.features, expected, atol=1e-12)

    def test_full_turn_is_identity(self):
        plain = make_domain(DomainSpec(name="a", n_samples=300, seed=9))
        turned = make_domain(DomainSpec(name="b", n_samples=300, seed=9,
                                        transform=AffineTransform(rotation_deg=360.0)))
        assert_allclose(turned.features, plain.features, rtol=0, atol=1e-9)

    def test_half_turn_reflects_about_translation_center(self):
        center = [1.5, -0.5]
        shifted = make_domain(DomainSpec(name="a", n_samples=300, seed=9,
                                         transform=AffineTransform(translation=center)))
        half = make_domain(DomainSpec(name="b", n_samples=300, seed=9,
                                      transform=AffineTransform(rotation_deg=180.0, translation=center)))
        for x, y in zip(shifted.features, half.features):
            assert_allclose(y - center, -(x - center), rtol=0, atol=1e-12)

    def test_class_means_on_circle(self):
        means = BaseTask(num_classes=4, dim=3).class_means()
        assert_allclose(means[0], [0.0, 1.0, 0.0], atol=1e-12)
        assert_allclose(np.linalg.norm(means[:, :2], axis=1), 1.0)

    def test_standardize(self):
        ds = make_domain(DomainSpec(name="s", n_samples=600, seed=1, standardize=True,
                                    transform=AffineTransform(scale=[3.0, 0.5], translation=[4.0, -2.0])))
        assert_allclose(ds.features.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(ds.features.std(axis=0), 1.0)

    def test_singular_transform_rejected(self):
        with self.assertRaises(ConfigurationError):
            make_domain(DomainSpec(name="z", transform=AffineTransform(scale=[0.0, 1.0])))
        with self.assertRaises(ConfigurationError):
            make_domain(DomainSpec(name="p", transform=AffineTransform(permutation=[0, 0])))

    def test_permutation(self):
        x = np.array([[1.0, 2.0]])
        assert_allclose(apply_transform(AffineTransform(permutation=[1, 0]), x), [[2.0, 1.0]])

    def test_too_few_samples(self):
        with self.assertRaises(ConfigurationError):
            make_domain(DomainSpec(name="tiny", n_samples=2))


class TestSplits(unittest.TestCase):
    def setUp(self):
        self.ds = make_domain(DomainSpec(name="a", n_samples=1200, seed=3))

    def test_single_client_is_a_copy_without_rng_draws(self):
        rng = np.random.default_rng(0)
        state = rng.bit_generator.state
        shards = split_domain(self.ds, 1, rng)
        self.assertEqual(rng.bit_generator.state, state)
        assert_array_equal(shards[0].features, self.ds.features)
        self.assertIsNot(shards[0].features, self.ds.features)

    def test_shard_sizes(self):
        shards = split_domain(self.ds, 7, np.random.default_rng(1))
        sizes = [len(s) for s in shards]
        self.assertEqual(sum(sizes), 1200)
        self.assertLessEqual(max(sizes) - min(sizes), 1)
        merged = np.concatenate([s.features for s in shards])
        self.assertEqual(len(np.unique(merged, axis=0)), 1200)

    def test_too_many_clients(self):
        with self.assertRaises(InputError):
            split_domain(self.ds.subset([0, 1]), 3, np.random.default_rng(0))

    def test_stratified_split(self):
        train, test = train_test_split(self.ds, 0.5, np.random.default_rng(2))
        self.assertEqual((len(train), len(test)), (600, 600))
        assert_array_equal(test.class_counts(), [200, 200, 200])
        both = np.concatenate([train.features, test.features])
        self.assertEqual(len(np.unique(both, axis=0)), 1200)

    def test_largest_remainder_allocation(self):
        labels = np.array([0] * 5 + [1] * 3 + [2] * 2)
        ds = Dataset(np.arange(20.0).reshape(10, 2), labels, "u", 3)
        train, test = train_test_split(ds, 0.5, np.random.default_rng(0))
        assert_array_equal(test.class_counts(), [3, 1, 1])
        assert_array_equal(train.class_counts(), [2, 2, 1])

    def test_empty_class_split_rejected(self):
        ds = Dataset(np.arange(12.0).reshape(6, 2), np.array([0, 1, 1, 1, 1, 1]), "e", 2)
        with self.assertRaises(ConfigurationError):
            train_test_split(ds, 0.5, np.random.default_rng(0))

    def test_unlabeled_split(self):
        train, test = train_test_split(self.ds.unlabeled(), 0.25, np.random.default_rng(0))
        self.assertEqual((len(train), len(test)), (900, 300))
        self.assertFalse(test.labeled)


if __name__ == '__main__':
    unittest.main()
