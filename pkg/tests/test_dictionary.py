import unittest

import numpy as np

from koopgen.dictionary import (
    ConcatDictionary,
    DelayBuffer,
    DelayDictionary,
    FourierDictionary,
    IdentityDictionary,
    MonomialDictionary,
    RbfDictionary,
    dictionary_from_descriptor,
    halton_rbf_centers,
    monomial_exponents,
)
from koopgen.errors import InvalidInputError, UnsupportedOperationError


def _numeric_jacobian(d, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        cols.append((d.eval(x + e) - d.eval(x - e)) / (2.0 * eps))
    return np.stack(cols, axis=1)


class TestMonomialDictionary(unittest.TestCase):
    def test_dimension_is_binomial(self) -> None:
        # C(2 + 5, 5) = 21 for the Duffing lifting
        self.assertEqual(MonomialDictionary(2, 5).n_o, 21)
        # C(4 + 2, 2) = 15 for four Burgers observations
        self.assertEqual(MonomialDictionary(4, 2).n_o, 15)

    def test_graded_order_and_values(self) -> None:
        d = MonomialDictionary(2, 2)
        np.testing.assert_array_equal(
            monomial_exponents(2, 2),
            [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]],
        )
        np.testing.assert_allclose(d.eval([2.0, 3.0]), [1.0, 2.0, 3.0, 4.0, 6.0, 9.0])

    def test_jacobian_matches_finite_differences(self) -> None:
        d = MonomialDictionary(2, 4)
        x = [0.3, -0.7]
        np.testing.assert_allclose(d.jacobian(x), _numeric_jacobian(d, x), atol=1e-7)

    def test_state_estimate_reads_linear_rows(self) -> None:
        d = MonomialDictionary(3, 2)
        x = np.array([0.1, -0.2, 0.5])
        np.testing.assert_allclose(d.state_estimate(d.eval(x)), x)
        self.assertEqual(d.linear_indices(), [1, 2, 3])

    def test_eval_batch_returns_columns(self) -> None:
        d = MonomialDictionary(2, 1)
        out = d.eval_batch([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        self.assertEqual(out.shape, (3, 3))
        np.testing.assert_allclose(out[:, 1], [1.0, 3.0, 4.0])

    def test_wrong_state_dimension_is_rejected(self) -> None:
        with self.assertRaises(InvalidInputError):
            MonomialDictionary(2, 2).eval([1.0, 2.0, 3.0])


class TestOtherDictionaries(unittest.TestCase):
    def test_fourier_values_and_angle_recovery(self) -> None:
        d = FourierDictionary(1, max_frequency=2, include_constant=True)
        self.assertEqual(d.n_o, 5)
        z = d.eval([0.4])
        np.testing.assert_allclose(z, [1.0, np.cos(0.4), np.sin(0.4), np.cos(0.8), np.sin(0.8)])
        self.assertAlmostEqual(float(d.state_estimate(z)[0]), 0.4, places=12)
        np.testing.assert_allclose(d.jacobian([0.4]), _numeric_jacobian(d, [0.4]), atol=1e-7)

    def test_rbf_kernels_have_consistent_jacobians(self) -> None:
        centers = halton_rbf_centers(2, 6, [-1.0, -1.0], [1.0, 1.0])
        x = [0.2, -0.1]
        for kernel in ("gaussian", "inverse_quadratic", "multiquadric"):
            d = RbfDictionary(centers, 0.7, kernel, include_constant=True)
            self.assertEqual(d.n_o, 7)
            np.testing.assert_allclose(d.jacobian(x), _numeric_jacobian(d, x), atol=1e-7)

    def test_rbf_without_state_estimate(self) -> None:
        d = RbfDictionary([[0.0]], 1.0)
        with self.assertRaises(UnsupportedOperationError):
            d.state_estimate([1.0])

    def test_halton_centers_are_deterministic_and_in_box(self) -> None:
        a = halton_rbf_centers(3, 10, [0.0, -1.0, 2.0], [1.0, 1.0, 3.0])
        b = halton_rbf_centers(3, 10, [0.0, -1.0, 2.0], [1.0, 1.0, 3.0])
        np.testing.assert_array_equal(a, b)
        self.assertTrue(np.all(a >= [0.0, -1.0, 2.0]) and np.all(a <= [1.0, 1.0, 3.0]))
        # first unscrambled point after skipping the origin is (1/2, 1/3, 1/5)
        np.testing.assert_allclose(a[0], [0.5, -1.0 + 2.0 / 3.0, 2.2])

    def test_concat_stacks_parts(self) -> None:
        d = ConcatDictionary([IdentityDictionary(2), MonomialDictionary(2, 2)])
        self.assertEqual(d.n_o, 8)
        z = d.eval([1.0, 2.0])
        np.testing.assert_allclose(z[:2], [1.0, 2.0])
        np.testing.assert_allclose(d.state_estimate(z), [1.0, 2.0])

    def test_descriptor_round_trip(self) -> None:
        dicts = [
            IdentityDictionary(3),
            MonomialDictionary(2, 3),
            FourierDictionary(2, 1),
            RbfDictionary(halton_rbf_centers(2, 4, -1.0, 1.0), 0.5, "multiquadric"),
            DelayDictionary(MonomialDictionary(4, 2), 2),
        ]
        for d in dicts:
            self.assertEqual(dictionary_from_descriptor(d.descriptor()), d)

    def test_unknown_descriptor_kind(self) -> None:
        with self.assertRaises(InvalidInputError):
            dictionary_from_descriptor({"kind": "wavelet"})


class TestDelay(unittest.TestCase):
    def test_buffer_stacks_newest_first(self) -> None:
        buf = DelayBuffer(depth=3, raw_dim=1)
        self.assertIsNone(buf.push([1.0]))
        self.assertIsNone(buf.push([2.0]))
        np.testing.assert_array_equal(buf.push([3.0]), [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(buf.push([4.0]), [4.0, 3.0, 2.0])
        buf.clear()
        self.assertFalse(buf.ready)

    def test_delay_dictionary_shape_rules(self) -> None:
        d = DelayDictionary(MonomialDictionary(4, 1), 2)
        self.assertEqual(d.raw_dim, 2)
        self.assertEqual(d.buffer().depth, 2)
        with self.assertRaises(UnsupportedOperationError):
            d.jacobian([0.0, 0.0, 0.0, 0.0])
        with self.assertRaises(InvalidInputError):
            DelayDictionary(MonomialDictionary(3, 1), 2)


if __name__ == "__main__":
    unittest.main()
