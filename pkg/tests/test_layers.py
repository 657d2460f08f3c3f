import unittest
from decimal import Decimal, localcontext

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from factsim.nn import (ArchitectureSpec, GradientTarget, LayerSpec, ModelParams, backward, cross_entropy,
                        forward, softmax, value_and_grad)
from factsim.utils import DimensionError, InputError, ProtocolError


def linear(i, o):
    return LayerSpec(kind="linear", in_features=i, out_features=o)


class TestArchitectureSpec(unittest.TestCase):
    def test_reference_shapes(self):
        spec = ArchitectureSpec.reference(2, 3)
        self.assertEqual(spec.param_shapes("generator"), [(2, 64), (64,), (64, 32), (32,)])
        self.assertEqual(spec.param_shapes("head"), [(32, 3), (3,)])
        self.assertEqual(spec.latent_dim, 32)
        self.assertEqual(spec.num_classes, 3)

    def test_reference_with_dropout(self):
        spec = ArchitectureSpec.reference(4, 2, hidden=(5,), dropout=0.5)
        self.assertEqual([layer.kind for layer in spec.head], ["dropout", "linear", "softmax"])

    def test_width_mismatch_rejected(self):
        with self.assertRaises(ValidationError):
            ArchitectureSpec(input_dim=2, generator=[linear(2, 4), LayerSpec(kind="relu")],
                             head=[linear(5, 3), LayerSpec(kind="softmax")])

    def test_head_must_end_in_softmax(self):
        with self.assertRaises(ValidationError):
            ArchitectureSpec(input_dim=2, generator=[linear(2, 4)], head=[linear(4, 3)])

    def test_softmax_only_at_the_end(self):
        with self.assertRaises(ValidationError):
            ArchitectureSpec(input_dim=2, generator=[linear(2, 4), LayerSpec(kind="softmax")],
                             head=[linear(4, 3), LayerSpec(kind="softmax")])

    def test_linear_needs_dimensions(self):
        with self.assertRaises(ValidationError):
            LayerSpec(kind="linear", in_features=3)

    def test_unknown_partition(self):
        with self.assertRaises(InputError):
            ArchitectureSpec.reference(2, 2).layers("encoder")


class TestModelParams(unittest.TestCase):
    def setUp(self):
        self.spec = ArchitectureSpec.reference(3, 2, hidden=(4,))
        self.params = ModelParams.initialize(self.spec, np.random.default_rng(0))

    def test_initialization(self):
        w1, b1 = self.params.generator
        bound = np.sqrt(6.0 / (3 + 4))
        self.assertTrue(np.all(np.abs(w1) <= bound))
        assert_array_equal(b1, np.zeros(4))
        again = ModelParams.initialize(self.spec, np.random.default_rng(0))
        self.assertTrue(again.bitwise_equal(self.params))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            ModelParams(self.spec, [np.zeros((3, 5)), np.zeros(5)], self.params.head)

    def test_copy_is_independent(self):
        clone = self.params.copy()
        self.assertTrue(clone.bitwise_equal(self.params))
        clone.head[0][0, 0] += 1.0
        self.assertFalse(clone.bitwise_equal(self.params))
        self.assertEqual(clone.digest("generator"), self.params.digest("generator"))
        self.assertNotEqual(clone.digest("head"), self.params.digest("head"))

    def test_replace_shares_untouched_arrays(self):
        new_head = [np.zeros_like(a) for a in self.params.head]
        replaced = self.params.replace(head=new_head)
        self.assertIs(replaced.generator[0], self.params.generator[0])
        assert_array_equal(replaced.head[0], np.zeros((4, 2)))

    def test_check_compatible(self):
        other = ModelParams.zeros(ArchitectureSpec.reference(3, 2, hidden=(5,)))
        with self.assertRaises(ProtocolError):
            self.params.check_compatible(other)

    def test_num_params(self):
        self.assertEqual(self.params.num_params, 3 * 4 + 4 + 4 * 2 + 2)
        self.assertEqual(self.params.flat().shape, (self.params.num_params,))


class TestForwardBackward(unittest.TestCase):
    def setUp(self):
        self.spec = ArchitectureSpec.reference(3, 4, hidden=(5, 6))
        rng = np.random.default_rng(1)
        self.params = ModelParams.initialize(self.spec, rng)
        self.x = rng.standard_normal((7, 3))
        self.labels = np.array([0, 1, 2, 3, 0, 1, 2])

    def test_softmax_rows_sum_to_one(self):
        probs = softmax(np.array([[1000.0, 0.0], [-5.0, 5.0]]))
        assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        self.assertTrue(np.all(np.isfinite(probs)))

    def test_softmax_entries_stay_inside_unit_interval(self):
        probs = softmax(np.array([[1000.0, 0.0, -1000.0], [0.0, 800.0, 0.0]]))
        self.assertTrue(np.all(probs > 0.0))
        self.assertTrue(np.all(probs < 1.0))
        self.assertEqual(np.argmax(probs[0]), 0)
        self.assertEqual(np.argmax(probs[1]), 1)

    def test_forward_entries_stay_inside_unit_interval(self):
        big = ModelParams(self.spec, [1e3 * a for a in self.params.generator], [1e3 * a for a in self.params.head])
        _, probs = forward(big, 10.0 * self.x)
        self.assertTrue(np.all((probs > 0.0) & (probs < 1.0)))
        assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_forward_shapes(self):
        latent, probs = forward(self.params, self.x)
        self.assertEqual(latent.shape, (7, 6))
        self.assertEqual(probs.shape, (7, 4))
        assert_allclose(probs.sum(axis=1), 1.0)

    def test_wrong_input_width_names_layer(self):
        with self.assertRaises(DimensionError) as ctx:
            forward(self.params, np.zeros((2, 4)))
        self.assertIn("generator layer 0", str(ctx.exception))

    def test_bad_mode(self):
        with self.assertRaises(InputError):
            forward(self.params, self.x, mode="inference")

    def test_value_and_grad_reports_loss(self):
        loss, _ = value_and_grad(self.params, self.x, GradientTarget(), labels=self.labels)
        _, probs = forward(self.params, self.x)
        self.assertEqual(loss, cross_entropy(probs, self.labels))

    def test_excluded_partition_is_zero(self):
        grads = backward(self.params, self.x, GradientTarget(partitions={"head"}), labels=self.labels)
        for g in grads.generator:
            self.assertFalse(np.any(g))
        self.assertTrue(any(np.any(g) for g in grads.head))

    def test_cross_entropy_needs_labels(self):
        with self.assertRaises(InputError):
            backward(self.params, self.x, GradientTarget())

    def test_idd_needs_second_head(self):
        with self.assertRaises(InputError):
            backward(self.params, self.x, GradientTarget(loss="idd"))

    def test_idd_second_head_shapes(self):
        with self.assertRaises(DimensionError):
            backward(self.params, self.x, GradientTarget(loss="idd"), second_head=[np.zeros((6, 3)), np.zeros(3)])

    def test_identical_heads_give_zero_gradient(self):
        grads = backward(self.params, self.x, GradientTarget(loss="idd"),
                         second_head=[a.copy() for a in self.params.head])
        self.assertFalse(np.any(grads.flat()))


def as_decimal(a):
    return [[Decimal(float(v)) for v in row] for row in np.atleast_2d(a)]


def decimal_forward(x, w1, b1, w2, b2):
    """Independent forward pass of a ReLU MLP in 50-digit decimal arithmetic."""
    with localcontext() as ctx:
        ctx.prec = 50
        xs, w1, w2 = as_decimal(x)[0], as_decimal(w1), as_decimal(w2)
        b1, b2 = as_decimal(b1)[0], as_decimal(b2)[0]
        hidden = [max(Decimal(0), sum(xs[i] * w1[i][j] for i in range(len(xs))) + b1[j]) for j in range(len(b1))]
        logits = [sum(hidden[i] * w2[i][k] for i in range(len(hidden))) + b2[k] for k in range(len(b2))]
        top = max(logits)
        e = [(z - top).exp() for z in logits]
        total = sum(e)
        return [float(v / total) for v in e]


class TestForwardOracle(unittest.TestCase):
    def setUp(self):
        self.spec = ArchitectureSpec.reference(2, 3, hidden=(3,))
        self.w1 = np.array([[0.5, -1.25, 2.0], [0.75, 0.125, -0.5]])
        self.b1 = np.array([0.1, 0.2, -0.3])
        self.w2 = np.array([[1.5, -0.5, 0.25], [-2.0, 0.75, 1.0], [0.3, 0.6, -0.9]])
        self.b2 = np.array([0.05, -0.15, 0.0])
        self.params = ModelParams(self.spec, [self.w1, self.b1], [self.w2, self.b2])

    def test_hand_set_mlp_matches_decimal_evaluation(self):
        for x in ([0.8, -0.4], [-1.5, 2.25], [0.0, 0.0]):
            _, probs = forward(self.params, np.array([x]))
            expected = decimal_forward(np.array(x), self.w1, self.b1, self.w2, self.b2)
            assert_allclose(probs[0], expected, rtol=1e-13, atol=1e-15)

    def test_zero_model_is_uniform(self):
        _, probs = forward(ModelParams.zeros(ArchitectureSpec.reference(2, 10, hidden=(4,))),
                           np.array([[3.0, -7.0]]))
        assert_allclose(probs, np.full((1, 10), 0.1), rtol=1e-15)
        self.assertAlmostEqual(probs.sum(), 1.0, places=12)


class TestSingleLinearLayerGradient(unittest.TestCase):
    def test_cross_entropy_gradient_is_outer_product(self):
        spec = ArchitectureSpec(input_dim=3, generator=[LayerSpec(kind="dropout", rate=0.0)],
                                head=[linear(3, 4), LayerSpec(kind="softmax")])
        rng = np.random.default_rng(5)
        weight, bias = rng.standard_normal((3, 4)), rng.standard_normal(4)
        params = ModelParams(spec, [], [weight, bias])
        x = np.array([[0.4, -1.1, 2.0]])
        logits = x[0] @ weight + bias
        probs = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
        residual = probs - np.eye(4)[2]

        grads = backward(params, x, GradientTarget(), labels=np.array([2]))
        assert_allclose(grads.head[0], np.outer(x[0], residual), rtol=1e-12, atol=1e-15)
        assert_allclose(grads.head[1], residual, rtol=1e-12, atol=1e-15)
        self.assertEqual(grads.generator, [])


class TestDropout(unittest.TestCase):
    def setUp(self):
        self.spec = ArchitectureSpec.reference(2, 2, hidden=(50,), dropout=0.5)
        self.params = ModelParams.initialize(self.spec, np.random.default_rng(2))
        self.x = np.random.default_rng(3).standard_normal((10, 2))

    def test_train_mode_needs_rng(self):
        with self.assertRaises(InputError):
            forward(self.params, self.x, mode="train")

    def test_eval_mode_is_deterministic(self):
        _, first = forward(self.params, self.x)
        _, second = forward(self.params, self.x)
        assert_array_equal(first, second)

    def test_train_mode_changes_output(self):
        _, eval_probs = forward(self.params, self.x)
        _, train_probs = forward(self.params, self.x, mode="train", rng=np.random.default_rng(4))
        self.assertFalse(np.array_equal(eval_probs, train_probs))
        _, repeat = forward(self.params, self.x, mode="train", rng=np.random.default_rng(4))
        assert_array_equal(train_probs, repeat)


if __name__ == '__main__':
    unittest.main()
