import unittest
from unittest import mock

import numpy as np

from koopgen import numerics
from koopgen.errors import InvalidInputError


class TestPseudoinverse(unittest.TestCase):
    def test_rank_and_pinv_of_rank_deficient_matrix(self) -> None:
        a = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
        fac = numerics.svd(a)
        self.assertEqual(fac.rank, 1)
        np.testing.assert_allclose(numerics.pinv(a), np.linalg.pinv(a), atol=1e-12)

    def test_lstsq_recovers_exact_map(self) -> None:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 20))
        m = rng.standard_normal((2, 3))
        np.testing.assert_allclose(numerics.lstsq(m @ x, x), m, atol=1e-12)

    def test_lstsq_column_mismatch_is_rejected(self) -> None:
        with self.assertRaises(InvalidInputError):
            numerics.lstsq(np.ones((2, 3)), np.ones((2, 4)))

    def test_bad_rtol_is_rejected(self) -> None:
        with self.assertRaises(InvalidInputError):
            numerics.pinv(np.eye(2), rtol=0.0)

    def test_penrose_conditions_for_all_rank_profiles(self) -> None:
        rng = np.random.default_rng(7)
        for m, n in ((8, 6), (5, 8), (6, 6)):
            for rank in range(1, min(m, n) + 1):
                u, _ = np.linalg.qr(rng.standard_normal((m, rank)))
                v, _ = np.linalg.qr(rng.standard_normal((n, rank)))
                a = u @ np.diag(rng.uniform(1.0, 10.0, rank)) @ v.T
                a_plus = numerics.pinv(a)
                tol = 1e-8 * float(np.linalg.norm(a, 2))
                self.assertEqual(numerics.svd(a).rank, rank)
                self.assertLessEqual(float(np.max(np.abs(a @ a_plus @ a - a))), tol)
                self.assertLessEqual(float(np.max(np.abs(a_plus @ a @ a_plus - a_plus))), tol)
                self.assertLessEqual(float(np.max(np.abs((a @ a_plus).T - a @ a_plus))), tol)
                self.assertLessEqual(float(np.max(np.abs((a_plus @ a).T - a_plus @ a))), tol)

    def test_zero_matrix_has_rank_zero(self) -> None:
        fac = numerics.svd(np.zeros((2, 3)))
        self.assertEqual(fac.rank, 0)
        np.testing.assert_array_equal(fac.pinv(), np.zeros((3, 2)))


class TestIntegration(unittest.TestCase):
    def test_exact_scheme_matches_scalar_exponential(self) -> None:
        z = numerics.integrate_bilinear([[-1.0]], [[[2.0]]], [0.5], [3.0], 0.7)
        self.assertAlmostEqual(float(z[0]), 3.0, places=12)

    def test_euler_and_rk4_order(self) -> None:
        k0 = np.array([[0.0, 1.0], [-1.0, 0.0]])
        z0 = np.array([1.0, 0.0])
        exact = numerics.integrate_bilinear(k0, [], [], z0, 0.1)
        euler = numerics.integrate_bilinear(k0, [], [], z0, 0.1, scheme="euler")
        rk4 = numerics.integrate_bilinear(k0, [], [], z0, 0.1, scheme="rk4")
        self.assertLess(np.linalg.norm(rk4 - exact), 1e-6)
        self.assertGreater(np.linalg.norm(euler - exact), 1e-3)

    def test_exponential_of_negated_matrix_is_the_inverse(self) -> None:
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = rng.standard_normal((6, 6))
            a *= rng.uniform(0.1, 5.0) / float(np.linalg.norm(a, 2))
            np.testing.assert_allclose(numerics.expm(a) @ numerics.expm(-a), np.eye(6), atol=1e-10)

    def test_exact_scheme_composes_over_consecutive_intervals(self) -> None:
        rng = np.random.default_rng(9)
        for _ in range(10):
            k0 = rng.standard_normal((4, 4)) / 2.0
            b = [rng.standard_normal((4, 4)) / 2.0 for _ in range(2)]
            u = rng.uniform(-1.0, 1.0, 2)
            z0 = rng.standard_normal(4)
            half = numerics.integrate_bilinear(k0, b, u, z0, 0.3)
            twice = numerics.integrate_bilinear(k0, b, u, half, 0.3)
            once = numerics.integrate_bilinear(k0, b, u, z0, 0.6)
            np.testing.assert_allclose(twice, once, atol=1e-10)

    def test_unknown_scheme_and_bad_dt(self) -> None:
        with self.assertRaises(InvalidInputError):
            numerics.integrate_bilinear(np.eye(1), [], [], [1.0], 0.1, scheme="midpoint")
        with self.assertRaises(InvalidInputError):
            numerics.integrate_bilinear(np.eye(1), [], [], [1.0], 0.0)

    def test_input_count_must_match_matrices(self) -> None:
        with self.assertRaises(InvalidInputError):
            numerics.bilinear_generator(np.eye(2), [np.eye(2)], [1.0, 2.0])


class TestGmres(unittest.TestCase):
    def test_solves_well_conditioned_system(self) -> None:
        rng = np.random.default_rng(1)
        a = np.eye(30) + 0.1 * rng.standard_normal((30, 30))
        b = rng.standard_normal(30)
        res = numerics.gmres(lambda v: a @ v, b, tol=1e-12, max_iter=200, restart=30)
        self.assertTrue(res.converged)
        np.testing.assert_allclose(a @ res.x, b, atol=1e-9)
        self.assertGreater(res.iterations, 0)

    def test_zero_rhs_returns_zero(self) -> None:
        res = numerics.gmres(lambda v: v, np.zeros(4))
        self.assertTrue(res.converged)
        self.assertEqual(res.iterations, 0)

    def test_convergence_is_judged_by_the_true_residual(self) -> None:
        b = np.array([1.0, 2.0, 3.0])
        with mock.patch("koopgen.numerics._scipy_gmres", return_value=(np.zeros(3), 0)):
            res = numerics.gmres(lambda v: 2.0 * v, b, tol=1e-10)
        self.assertFalse(res.converged)
        self.assertAlmostEqual(res.relative_residual, 1.0)
        self.assertIn("true relative residual", res.message)

    def test_iteration_cap_is_reported_not_raised(self) -> None:
        rng = np.random.default_rng(2)
        a = rng.standard_normal((40, 40))
        res = numerics.gmres(lambda v: a @ v, rng.standard_normal(40), tol=1e-14, max_iter=2, restart=2)
        self.assertFalse(res.converged)
        self.assertGreater(res.relative_residual, 1e-14)


if __name__ == "__main__":
    unittest.main()
