import itertools
import math
import unittest

import numpy as np

from koopgen.dictionary import MonomialDictionary
from koopgen.edmd import GeneratorModel, OperatorModel, fit_operators
from koopgen.errors import InvalidInputError
from koopgen.ocp import (
    FourierBasis,
    OcpSpec,
    QuadraticStageCost,
    SinusoidReference,
    StepReference,
    TrackingCost,
    bfgs_box,
    cold_start,
    forward,
    initial_coefficients,
    mpc_loop,
    objective,
    objective_and_gradient,
    rms_tracking_error,
    solve_adjoint_discrete,
)
from koopgen.plants import LinearPlant, SamplingSpec, random_stable_linear_plant, sample_training_set


def random_operator(rng: np.random.Generator, n_o: int, n_c: int, dt: float = 0.1) -> OperatorModel:
    m = rng.standard_normal((n_o, n_o))
    k0 = 0.9 * m / max(1e-12, float(np.max(np.abs(np.linalg.eigvals(m)))))
    b = tuple(0.2 * rng.standard_normal((n_o, n_o)) / math.sqrt(n_o) for _ in range(n_c))
    return OperatorModel(
        k0=k0,
        b=b,
        dictionary=MonomialDictionary(1, n_o - 1).descriptor(),
        input_lo=-np.ones(n_c),
        input_hi=np.ones(n_c),
        dt=dt,
    )


def random_cost(rng: np.random.Generator, horizon: int, n_o: int, n_c: int) -> QuadraticStageCost:
    q = np.empty((horizon, n_o, n_o))
    r = np.empty((horizon, n_c, n_c))
    for i in range(horizon):
        mq = rng.standard_normal((n_o, n_o))
        mr = rng.standard_normal((n_c, n_c))
        q[i] = mq @ mq.T / n_o
        r[i] = mr @ mr.T / n_c + 0.1 * np.eye(n_c)
    return QuadraticStageCost(q=q, r=r, a=rng.standard_normal((horizon, n_o)))


def central_difference(fun, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        g[k] = (fun(x + e) - fun(x - e)) / (2.0 * eps)
    return g


class TestGradient(unittest.TestCase):
    def test_adjoint_gradient_matches_finite_differences(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(50):
            n_o = int(rng.integers(1, 26))
            n_c = int(rng.integers(1, 3))
            horizon = int(rng.integers(1, 11))
            model = random_operator(rng, n_o, n_c)
            spec = OcpSpec(model, horizon, 0.1, -np.ones(n_c), np.ones(n_c), random_cost(rng, horizon, n_o, n_c))
            z0 = rng.standard_normal(n_o)
            coeffs = rng.uniform(-1.0, 1.0, horizon * n_c)
            _, g = objective_and_gradient(spec, z0, coeffs)
            fd = central_difference(lambda c: objective_and_gradient(spec, z0, c)[0], coeffs)
            scale = max(float(np.max(np.abs(fd))), 1e-8)
            self.assertLessEqual(float(np.max(np.abs(g - fd))) / scale, 1e-5)

    def test_fourier_gradient_maps_through_the_basis(self) -> None:
        rng = np.random.default_rng(1)
        horizon, n_o, n_c = 6, 4, 2
        basis = FourierBasis(horizon, n_c, 0.1, max_frequency=2)
        spec = OcpSpec(
            random_operator(rng, n_o, n_c),
            horizon,
            0.1,
            -np.ones(n_c),
            np.ones(n_c),
            random_cost(rng, horizon, n_o, n_c),
            basis=basis,
        )
        z0 = rng.standard_normal(n_o)
        coeffs = 0.2 * rng.standard_normal(basis.dim)
        _, g = objective_and_gradient(spec, z0, coeffs)
        fd = central_difference(lambda c: objective_and_gradient(spec, z0, c)[0], coeffs)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_adjoint_vanishes_at_the_end(self) -> None:
        rng = np.random.default_rng(2)
        spec = OcpSpec(random_operator(rng, 3, 1), 4, 0.1, [-1.0], [1.0], random_cost(rng, 4, 3, 1))
        u = rng.uniform(-1.0, 1.0, (4, 1))
        z = forward(spec.model, rng.standard_normal(3), u)
        lam = solve_adjoint_discrete(spec, z, u).lam
        np.testing.assert_array_equal(lam[-1], np.zeros(3))
        # last interval only sees its own stage cost
        expected = 0.1 * 2.0 * spec.cost.q[3] @ (z[4] - spec.cost.a[3])
        np.testing.assert_allclose(lam[3], expected)


class TestBfgsBox(unittest.TestCase):
    def _scalar_spec(self, hi: float) -> OcpSpec:
        model = OperatorModel(
            k0=[[1.0]],
            b=([[1.0]],),
            dictionary=MonomialDictionary(1, 0).descriptor(),
            input_lo=[-1.0],
            input_hi=[1.0],
            dt=0.1,
        )
        cost = QuadraticStageCost.constant([[1.0]], [[1.0]], [1.5], 1)
        return OcpSpec(model, 1, 0.1, [-1.0], [hi], cost)

    def test_interior_optimum(self) -> None:
        # J ~ ((1 + u) - 1.5)^2 + u^2 is minimal at u = 0.25
        res = bfgs_box(self._scalar_spec(1.0), [1.0])
        self.assertTrue(res.converged)
        self.assertAlmostEqual(float(res.inputs[0, 0]), 0.25, places=6)
        self.assertLessEqual(res.objective, res.initial_objective)

    def test_active_bound(self) -> None:
        res = bfgs_box(self._scalar_spec(0.1), [1.0])
        self.assertAlmostEqual(float(res.inputs[0, 0]), 0.1, places=8)
        self.assertLess(res.projected_gradient_norm, 1e-6)

    def test_matches_grid_search(self) -> None:
        rng = np.random.default_rng(3)
        for trial in range(5):
            model = random_operator(rng, 3, 1)
            spec = OcpSpec(model, 2, 0.1, [-1.0], [1.0], random_cost(rng, 2, 3, 1))
            z0 = rng.standard_normal(3)
            grid = np.linspace(-1.0, 1.0, 41)
            j_grid = min(
                objective(spec, forward(model, z0, np.array([[a], [b]])), np.array([[a], [b]]))
                for a, b in itertools.product(grid, grid)
            )
            res = bfgs_box(spec, z0)
            self.assertLessEqual(res.objective, j_grid + 0.05 * abs(j_grid) + 1e-8, msg=f"trial {trial}")
            self.assertTrue(np.all(np.abs(res.inputs) <= 1.0 + 1e-12))

    def test_fourier_inputs_respect_the_box(self) -> None:
        rng = np.random.default_rng(4)
        horizon = 5
        model = random_operator(rng, 3, 1)
        cost = QuadraticStageCost.constant(np.eye(3) * 10.0, [[1e-4]], [5.0, -5.0, 5.0], horizon)
        spec = OcpSpec(model, horizon, 0.1, [-0.5], [0.5], cost, basis=FourierBasis(horizon, 1, 0.1, 1))
        res = bfgs_box(spec, rng.standard_normal(3))
        self.assertTrue(np.all(res.inputs >= -0.5 - 1e-8))
        self.assertTrue(np.all(res.inputs <= 0.5 + 1e-8))
        self.assertLessEqual(res.objective, res.initial_objective)

    def test_initial_guess_length_is_checked(self) -> None:
        with self.assertRaises(InvalidInputError):
            bfgs_box(self._scalar_spec(1.0), [1.0], coeffs0=[0.0, 0.0])


class TestInitialIterate(unittest.TestCase):
    def test_warm_start_never_raises_the_first_objective(self) -> None:
        rng = np.random.default_rng(11)
        for _ in range(20):
            n_o, horizon = 4, 5
            model = random_operator(rng, n_o, 1)
            spec = OcpSpec(model, horizon, 0.1, [-1.0], [1.0], random_cost(rng, horizon, n_o, 1))
            z0 = rng.standard_normal(n_o)
            cold, j_cold = initial_coefficients(spec, z0)
            np.testing.assert_array_equal(cold, cold_start(spec))

            start, j_start = initial_coefficients(spec, z0, rng.uniform(-1.0, 1.0, spec.basis.dim))
            self.assertLessEqual(j_start, j_cold)
            u = spec.basis.to_inputs(start)
            self.assertLessEqual(abs(j_start - objective(spec, forward(model, z0, u), u)), 1e-12 * max(1.0, j_start))

            solved = bfgs_box(spec, z0)
            kept, _ = initial_coefficients(spec, z0, solved.coeffs)
            np.testing.assert_array_equal(kept, solved.coeffs)

    def test_warm_start_length_is_checked(self) -> None:
        rng = np.random.default_rng(12)
        spec = OcpSpec(random_operator(rng, 2, 1), 3, 0.1, [-1.0], [1.0], random_cost(rng, 3, 2, 1))
        with self.assertRaises(InvalidInputError):
            initial_coefficients(spec, np.zeros(2), np.zeros(4))


class TestWeightScaling(unittest.TestCase):
    def test_scaling_q_and_r_together_keeps_the_minimiser(self) -> None:
        rng = np.random.default_rng(13)
        k0 = np.eye(3)
        k0[1:, 1:] = 0.9 * np.eye(2) + 0.05 * rng.standard_normal((2, 2))
        b1 = np.zeros((3, 3))
        b1[1:, 0] = rng.standard_normal(2)
        model = OperatorModel(
            k0=k0,
            b=(b1,),
            dictionary=MonomialDictionary(2, 1).descriptor(),
            input_lo=[-1.0],
            input_hi=[1.0],
            dt=0.1,
        )
        cost = random_cost(rng, 4, 3, 1)
        z0 = np.concatenate([[1.0], rng.standard_normal(2)])
        spec = OcpSpec(model, 4, 0.1, [-100.0], [100.0], cost)
        base = bfgs_box(spec, z0, tol=1e-11, max_iter=2000)
        for s in (0.1, 10.0):
            scaled = bfgs_box(spec.with_cost(cost.scaled(s, s)), z0, tol=1e-11, max_iter=2000)
            np.testing.assert_allclose(scaled.inputs, base.inputs, atol=1e-5)
            self.assertLessEqual(abs(scaled.objective - s * base.objective), 1e-7 * s * max(1.0, base.objective))


class TestOcpSpec(unittest.TestCase):
    def test_cost_and_box_must_match(self) -> None:
        rng = np.random.default_rng(5)
        model = random_operator(rng, 3, 1)
        with self.assertRaises(InvalidInputError):
            OcpSpec(model, 3, 0.1, [-1.0], [1.0], random_cost(rng, 2, 3, 1))
        with self.assertRaises(InvalidInputError):
            OcpSpec(model, 2, 0.1, [-1.0, -1.0], [1.0, 1.0], random_cost(rng, 2, 3, 2))
        with self.assertRaises(InvalidInputError):
            QuadraticStageCost.constant(-np.eye(3), [[1.0]], np.zeros(3), 2)

    def test_operator_dt_must_match(self) -> None:
        rng = np.random.default_rng(6)
        spec = OcpSpec(random_operator(rng, 2, 1, dt=0.2), 2, 0.1, [-1.0], [1.0], random_cost(rng, 2, 2, 1))
        with self.assertRaises(InvalidInputError):
            spec.operator_model()

    def test_generators_are_discretised(self) -> None:
        gen = GeneratorModel(
            k0=[[-1.0]], b=([[2.0]],), dictionary=MonomialDictionary(1, 0).descriptor(), input_lo=[-1.0], input_hi=[1.0]
        )
        spec = OcpSpec(gen, 2, 0.1, [-1.0], [1.0], QuadraticStageCost.constant([[1.0]], [[0.0]], [0.0], 2))
        op = spec.operator_model()
        np.testing.assert_allclose(op.k0, [[0.9]])
        np.testing.assert_allclose(op.b[0], [[0.2]])
        self.assertIsInstance(spec.discretized().model, OperatorModel)


class TestReferences(unittest.TestCase):
    def test_step_reference(self) -> None:
        ref = StepReference([0.0, 13.3, 26.7], [[1.0], [-0.5], [1.2]])
        self.assertEqual(float(ref(0.0)[0]), 1.0)
        self.assertEqual(float(ref(13.3)[0]), -0.5)
        self.assertEqual(float(ref(40.0)[0]), 1.2)
        with self.assertRaises(InvalidInputError):
            StepReference([1.0, 0.0], [[0.0], [1.0]])

    def test_sinusoid_reference(self) -> None:
        ref = SinusoidReference(0.5, 0.05, 60.0, dim=4)
        np.testing.assert_allclose(ref(15.0), [0.55] * 4)

    def test_tracking_cost_samples_the_reference_at_interval_ends(self) -> None:
        tracking = TrackingCost(3, (1,), (1.0,), [[0.01]], lambda t: [t])
        cost = tracking.stage_cost(1.0, 3, 0.5)
        np.testing.assert_allclose(cost.a[:, 1], [1.5, 2.0, 2.5])
        np.testing.assert_allclose(cost.a[:, 0], 0.0)
        self.assertEqual(float(cost.q[0, 1, 1]), 1.0)
        self.assertEqual(float(cost.q[0, 0, 0]), 0.0)
        with self.assertRaises(InvalidInputError):
            TrackingCost(3, (3,), (1.0,), [[0.01]], lambda t: [t])


class _FailingPlant(LinearPlant):
    def __init__(self, fail_after: int) -> None:
        super().__init__([[-1.0]], [[1.0]])
        self.calls = 0
        self.fail_after = fail_after

    def _step_rows(self, xs, us, dt):
        self.calls += 1
        if self.calls > self.fail_after:
            return np.full_like(xs, np.nan)
        return super()._step_rows(xs, us, dt)


class TestMpcLoop(unittest.TestCase):
    def _linear_setup(self):
        plant = random_stable_linear_plant(2, 1, 3)
        spec = SamplingSpec(
            mode="trajectories", n_initial=10, n_steps=10, dt=0.1, state_lo=(-1.0, -1.0), state_hi=(1.0, 1.0)
        )
        d = MonomialDictionary(2, 1)
        model = fit_operators(d, sample_training_set(plant, spec, seed=0))
        return plant, d, model

    def test_closed_loop_record_is_consistent_with_the_plant(self) -> None:
        plant, d, model = self._linear_setup()
        tracking = TrackingCost(d.n_o, (1,), (1.0,), [[0.01]], StepReference([0.0], [[0.2]]))
        horizon = 5
        spec = OcpSpec(model, horizon, 0.1, [-1.0], [1.0], tracking.stage_cost(0.0, horizon, 0.1))
        for solver in ("bfgs", "newton"):
            record = mpc_loop(plant, d, spec, [0.0, 0.0], 1.0, tracking, solver=solver)
            self.assertFalse(record.aborted)
            self.assertEqual(record.n_steps, 10)
            self.assertEqual(len(record.t), 11)
            self.assertAlmostEqual(record.t[-1], 1.0)
            for k in range(record.n_steps):
                self.assertTrue(np.all(np.abs(record.u[k]) <= 1.0))
                np.testing.assert_allclose(record.x[k + 1], plant.step(record.x[k], record.u[k], 0.1), atol=1e-12)
            self.assertEqual(record.summary()["n_steps"], 10)
            self.assertGreaterEqual(rms_tracking_error(record), 0.0)

    def test_plant_failure_returns_partial_record(self) -> None:
        plant = _FailingPlant(fail_after=3)
        d = MonomialDictionary(1, 1)
        model = OperatorModel(
            k0=[[1.0, 0.0], [0.0, 0.9]],
            b=([[0.0, 0.0], [0.1, 0.0]],),
            dictionary=d.descriptor(),
            input_lo=[-1.0],
            input_hi=[1.0],
            dt=0.1,
        )
        tracking = TrackingCost(2, (1,), (1.0,), [[0.01]], StepReference([0.0], [[0.5]]))
        spec = OcpSpec(model, 3, 0.1, [-1.0], [1.0], tracking.stage_cost(0.0, 3, 0.1))
        record = mpc_loop(plant, d, spec, [0.0], 2.0, tracking)
        self.assertTrue(record.aborted)
        self.assertEqual(record.n_steps, 4)
        self.assertIn("plant step failed", record.message)

    def test_unknown_solver(self) -> None:
        plant, d, model = self._linear_setup()
        tracking = TrackingCost(d.n_o, (1,), (1.0,), [[0.01]], StepReference([0.0], [[0.2]]))
        spec = OcpSpec(model, 2, 0.1, [-1.0], [1.0], tracking.stage_cost(0.0, 2, 0.1))
        with self.assertRaises(InvalidInputError):
            mpc_loop(plant, d, spec, [0.0, 0.0], 1.0, tracking, solver="ipopt")


if __name__ == "__main__":
    unittest.main()
