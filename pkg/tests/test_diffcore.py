import math
import unittest

import numpy as np

import diffcore as dc
from nidlab_errors import DiffCoreError


def weighted_sum(out, weights):
    return dc.sum(dc.mul(out, weights))


class PrimitiveForwardTests(unittest.TestCase):
    def test_catalog_lists_every_primitive(self):
        self.assertEqual(dc.primitive_catalog(), dc.PRIMITIVES)

    def test_softmax_of_equal_logits_is_uniform(self):
        np.testing.assert_allclose(dc.softmax([0.0, 0.0]).data, [0.5, 0.5])

    def test_sigmoid_at_zero(self):
        self.assertEqual(dc.sigmoid(0.0).item(), 0.5)

    def test_conv1d_right_shift_kernel(self):
        out = dc.conv1d([[1.0, 0.0, 0.0, 0.0]], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(out.data, [[0.0, 1.0, 0.0, 0.0]])

    def test_conv1d_drops_mass_at_the_boundary(self):
        out = dc.conv1d([[0.0, 0.0, 0.0, 1.0]], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0, 0.0]])

    def test_softmax_of_one_hot_row(self):
        e = math.e
        expected = [1 / (3 + e), 1 / (3 + e), e / (3 + e), 1 / (3 + e)]
        np.testing.assert_allclose(dc.softmax([[0.0, 0.0, 1.0, 0.0]]).data[0], expected, atol=1e-12)
        np.testing.assert_allclose(expected, [0.17488, 0.17488, 0.47536, 0.17488], atol=1e-5)

    def test_bce_matches_hand_computation(self):
        value = dc.bce([1.0, 0.0], [0.9, 0.1]).item()
        self.assertAlmostEqual(value, -math.log(0.9), places=12)
        self.assertAlmostEqual(value, 0.105361, places=6)

    def test_bce_of_exact_prediction_is_zero(self):
        self.assertEqual(dc.bce([[0.0, 1.0, 0.0]], [[0.0, 1.0, 0.0]]).item(), 0.0)

    def test_log_is_floored(self):
        self.assertAlmostEqual(dc.log(0.0).item(), math.log(dc.LOG_EPS), places=12)

    def test_select_rows_accepts_boolean_mask(self):
        out = dc.select_rows([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], np.array([True, False, True]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [5.0, 6.0]])


class ContractTests(unittest.TestCase):
    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(DiffCoreError) as ctx:
            dc.add(np.ones(2), np.ones(3))
        self.assertEqual(ctx.exception.code, "shape_mismatch")
        self.assertIn("(2,)", ctx.exception.message)
        self.assertIn("(3,)", ctx.exception.message)

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(DiffCoreError) as ctx:
            dc.matmul(np.ones((2, 3)), np.ones((2, 3)))
        self.assertEqual(ctx.exception.code, "shape_mismatch")

    def test_non_finite_tensor_is_rejected(self):
        with self.assertRaises(DiffCoreError) as ctx:
            dc.Tensor([1.0, float("nan")])
        self.assertEqual(ctx.exception.code, "non_finite")

    def test_non_scalar_loss_is_rejected(self):
        tape = dc.Tape()
        w = tape.param("w", [1.0, 2.0])
        with self.assertRaises(DiffCoreError) as ctx:
            dc.grad(dc.mul(w, w), tape)
        self.assertEqual(ctx.exception.code, "non_scalar_loss")

    def test_tensors_from_two_tapes_cannot_mix(self):
        a = dc.Tape().param("a", 1.0)
        b = dc.Tape().param("b", 1.0)
        with self.assertRaises(DiffCoreError) as ctx:
            dc.add(a, b)
        self.assertEqual(ctx.exception.code, "tape_mismatch")

    def test_bce_rejects_values_outside_unit_interval(self):
        with self.assertRaises(DiffCoreError) as ctx:
            dc.bce([1.0], [1.5])
        self.assertEqual(ctx.exception.code, "invalid_probability")

    def test_tensors_are_read_only(self):
        t = dc.Tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.data[0] = 5.0


class GradTests(unittest.TestCase):
    def test_square_gradient(self):
        tape = dc.Tape()
        w = tape.param("w", 3.0)
        grads = dc.grad(w * w, tape)
        self.assertEqual(float(grads["w"]), 6.0)

    def test_sigmoid_gradient_at_zero(self):
        tape = dc.Tape()
        w = tape.param("w", 0.0)
        grads = dc.grad(dc.sigmoid(w), tape)
        self.assertEqual(float(grads["w"]), 0.25)

    def test_unused_parameter_gets_exact_zeros(self):
        tape = dc.Tape()
        w = tape.param("w", 2.0)
        tape.param("unused", [[1.0, 2.0], [3.0, 4.0]])
        grads = dc.grad(w * 5.0, tape)
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))
        self.assertEqual(float(grads["w"]), 5.0)

    def test_linear_function_is_exact(self):
        error = dc.check_gradients(lambda p: p["w"] * 3.0, {"w": np.array(0.3)})
        self.assertLessEqual(error, 1e-10)

    def test_random_two_layer_tanh_networks(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            params = {
                "W1": rng.normal(size=(3, 4)),
                "b1": rng.normal(size=4),
                "W2": rng.normal(size=(4, 2)),
                "b2": rng.normal(size=2),
            }
            x = rng.normal(size=(5, 3))

            def network(p, x=x):
                hidden = dc.tanh(dc.add(dc.matmul(x, p["W1"]), p["b1"]))
                out = dc.tanh(dc.add(dc.matmul(hidden, p["W2"]), p["b2"]))
                return dc.mean(dc.mul(out, out))

            self.assertLessEqual(dc.check_gradients(network, params), 1e-6)

    def test_every_primitive_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        worst = {}
        for _ in range(100):
            for name, (fn, params) in primitive_cases(rng).items():
                worst[name] = max(worst.get(name, 0.0), dc.check_gradients(fn, params))
        self.assertEqual(len(worst), 17)
        for name, error in worst.items():
            with self.subTest(primitive=name):
                self.assertLessEqual(error, 1e-6)

    def test_replaying_a_tape_gives_identical_gradients(self):
        rng = np.random.default_rng(5)
        tape = dc.Tape()
        w1 = tape.param("W1", rng.normal(size=(3, 4)))
        w2 = tape.param("W2", rng.normal(size=(4, 3)))
        x = rng.normal(size=(2, 3))
        target = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        loss = dc.bce(target, dc.softmax(dc.matmul(dc.tanh(dc.matmul(x, w1)), w2)))
        first = dc.grad(loss, tape)
        second = dc.grad(loss, tape)
        self.assertEqual(sorted(first), ["W1", "W2"])
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_value_and_grad_returns_loss(self):
        value, grads = dc.value_and_grad(lambda p: p["w"] * p["w"], {"w": np.array(4.0)})
        self.assertEqual(value, 16.0)
        self.assertEqual(float(grads["w"]), 8.0)


def rng_weights(shape):
    return np.arange(1, int(np.prod(shape)) + 1, dtype=np.float64).reshape(shape) / 10.0


class RMSPropTests(unittest.TestCase):
    def test_first_and_second_step(self):
        state = dc.OptimizerState(square_avg=np.zeros(1))
        param, state = dc.rmsprop_step(np.array([1.0]), np.array([1.0]), state)
        self.assertAlmostEqual(float(state.square_avg[0]), 0.01, places=15)
        self.assertAlmostEqual(float(param[0]) - 1.0, -0.01 / (0.1 + 1e-8), places=12)
        self.assertAlmostEqual(float(param[0]) - 1.0, -0.09999999, places=8)

        before = float(param[0])
        param, state = dc.rmsprop_step(param, np.array([1.0]), state)
        self.assertAlmostEqual(float(state.square_avg[0]), 0.0199, places=15)
        self.assertAlmostEqual(float(param[0]) - before, -0.01 / (math.sqrt(0.0199) + 1e-8), places=12)

    def test_square_average_stays_nonnegative(self):
        state = dc.OptimizerState(square_avg=np.zeros(3))
        rng = np.random.default_rng(0)
        param = np.zeros(3)
        for _ in range(10):
            param, state = dc.rmsprop_step(param, rng.normal(size=3), state)
            self.assertTrue(np.all(state.square_avg >= 0.0))

    def test_shape_mismatch(self):
        state = dc.OptimizerState(square_avg=np.zeros(2))
        with self.assertRaises(DiffCoreError) as ctx:
            dc.rmsprop_step(np.zeros(2), np.zeros(3), state)
        self.assertEqual(ctx.exception.code, "shape_mismatch")

    def test_non_finite_gradient(self):
        state = dc.OptimizerState(square_avg=np.zeros(1))
        with self.assertRaises(DiffCoreError) as ctx:
            dc.rmsprop_step(np.zeros(1), np.array([np.inf]), state)
        self.assertEqual(ctx.exception.code, "non_finite_gradient")

    def test_invalid_decay(self):
        with self.assertRaises(DiffCoreError):
            dc.OptimizerState(square_avg=np.zeros(1), rho=1.0)

    def test_named_optimizer_updates_every_parameter(self):
        params = {"a": np.ones(2), "b": np.zeros((1, 2))}
        optimizer = dc.RMSProp(params)
        updated = optimizer.step(params, {"a": np.ones(2), "b": -np.ones((1, 2))})
        self.assertTrue(np.all(updated["a"] < 1.0))
        self.assertTrue(np.all(updated["b"] > 0.0))


def primitive_cases(rng):
    """One randomly drawn (loss function, parameters) pair per primitive."""

    weights_2x3 = rng.normal(size=(2, 3))
    weights_3 = rng.normal(size=3)
    target = np.eye(3)[rng.integers(3, size=2)]
    return {
        "matmul_matrix": (lambda p: weighted_sum(dc.matmul(p["a"], p["b"]), weights_2x3),
                          {"a": rng.normal(size=(2, 4)), "b": rng.normal(size=(4, 3))}),
        "matmul_vector": (lambda p: dc.sum(dc.matmul(p["a"], p["v"])),
                          {"a": rng.normal(size=(3, 4)), "v": rng.normal(size=4)}),
        "add_broadcast": (lambda p: weighted_sum(dc.add(p["a"], p["b"]), weights_2x3),
                          {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}),
        "sub": (lambda p: weighted_sum(dc.sub(p["a"], p["b"]), weights_2x3),
                {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 3))}),
        "mul": (lambda p: weighted_sum(dc.mul(p["a"], p["b"]), weights_2x3),
                {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 3))}),
        "sigmoid": (lambda p: weighted_sum(dc.sigmoid(p["a"]), weights_2x3), {"a": rng.normal(size=(2, 3))}),
        "tanh": (lambda p: weighted_sum(dc.tanh(p["a"]), weights_2x3), {"a": rng.normal(size=(2, 3))}),
        "softmax": (lambda p: weighted_sum(dc.softmax(p["a"]), weights_2x3), {"a": rng.normal(size=(2, 3))}),
        "log": (lambda p: weighted_sum(dc.log(p["a"]), weights_2x3), {"a": rng.uniform(0.5, 2.0, size=(2, 3))}),
        "conv1d": (lambda p: weighted_sum(dc.conv1d(p["x"], p["k"]), weights_2x3),
                   {"x": rng.normal(size=(2, 3)), "k": rng.normal(size=3)}),
        "concat": (lambda p: dc.sum(dc.mul(dc.concat([p["a"], p["b"]], axis=1), rng_weights((2, 5)))),
                   {"a": rng.normal(size=(2, 2)), "b": rng.normal(size=(2, 3))}),
        "sum_axis": (lambda p: weighted_sum(dc.sum(p["a"], axis=0), weights_3), {"a": rng.normal(size=(2, 3))}),
        "mean_axis": (lambda p: weighted_sum(dc.mean(p["a"], axis=0), weights_3), {"a": rng.normal(size=(2, 3))}),
        "select_rows": (lambda p: dc.sum(dc.mul(dc.select_rows(p["a"], [2, 0, 2]), rng_weights((3, 3)))),
                        {"a": rng.normal(size=(3, 3))}),
        "reshape": (lambda p: weighted_sum(dc.reshape(p["a"], (2, 3)), weights_2x3), {"a": rng.normal(size=6)}),
        "transpose": (lambda p: weighted_sum(dc.transpose(p["a"]), weights_2x3), {"a": rng.normal(size=(3, 2))}),
        "bce": (lambda p: dc.bce(target, dc.sigmoid(p["a"])), {"a": rng.normal(size=(2, 3))}),
    }


if __name__ == "__main__":
    unittest.main()
