import math
import unittest

import numpy as np

from koopgen.errors import InvalidInputError, PlantStepError
from koopgen.plants import (
    Burgers1dPlant,
    BurgersParams,
    CircleRotationPlant,
    DuffingPlant,
    LinearPlant,
    SamplingSpec,
    SyntheticNonlinearInputPlant,
    _seed_for_index,
    _split_indices,
    affinity_defect,
    plant_from_descriptor,
    random_stable_linear_plant,
    sample_training_set,
)


class TestPlants(unittest.TestCase):
    def test_duffing_rhs(self) -> None:
        plant = DuffingPlant()
        # x2' = -0.5 x2 + x1 - x1^3 + u
        np.testing.assert_allclose(plant.rhs([1.0, 2.0], [0.5]), [2.0, -1.0 + 1.0 - 1.0 + 0.5])

    def test_duffing_substeps_converge(self) -> None:
        fine = DuffingPlant(max_substep=5e-4).step([1.0, 0.0], [0.3], 0.1)
        coarse = DuffingPlant(max_substep=1e-3).step([1.0, 0.0], [0.3], 0.1)
        self.assertLess(np.max(np.abs(fine - coarse)), 1e-9)

    def test_circle_wraps(self) -> None:
        plant = CircleRotationPlant()
        self.assertAlmostEqual(float(plant.step([0.0], [1.0], math.pi)[0]), math.pi, places=12)
        self.assertAlmostEqual(float(plant.step([6.0], [1.0], 0.5)[0]), 6.5 - 2.0 * math.pi, places=12)

    def test_linear_step_is_exact(self) -> None:
        plant = LinearPlant([[-1.0]], [[1.0]])
        x = plant.step([2.0], [0.5], 0.3)
        expected = 2.0 * math.exp(-0.3) + 0.5 * (1.0 - math.exp(-0.3))
        self.assertAlmostEqual(float(x[0]), expected, places=12)

    def test_random_stable_plant_is_stable_and_reproducible(self) -> None:
        a = random_stable_linear_plant(4, 2, 7)
        b = random_stable_linear_plant(4, 2, 7)
        np.testing.assert_array_equal(a.a, b.a)
        self.assertLess(np.max(np.linalg.eigvals(a.a).real), 0.0)
        self.assertEqual(a.n_c, 2)

    def test_burgers_constant_state_is_steady_without_input(self) -> None:
        plant = Burgers1dPlant()
        x = plant.step(plant.default_initial_state(), [0.0], 0.5)
        np.testing.assert_allclose(x, 0.5, atol=1e-12)
        self.assertEqual(plant.observe(x).shape, (4,))
        np.testing.assert_allclose(plant.observe(x), 0.5, atol=1e-12)

    def test_burgers_forcing_raises_the_mean(self) -> None:
        plant = Burgers1dPlant()
        x0 = plant.default_initial_state()
        x = plant.step(x0, [0.075], 0.5)
        self.assertGreater(float(np.mean(x)), 0.5)

    def test_burgers_mean_is_conserved_without_input(self) -> None:
        plant = Burgers1dPlant()
        v = 0.5 + 0.3 * np.sin(math.pi * plant.grid)
        x = plant.step(v, [0.0], 1.0)
        self.assertGreater(float(np.max(np.abs(x - v))), 1e-3)
        self.assertAlmostEqual(float(np.mean(x)), float(np.mean(v)), delta=1e-8)

        forced = plant.step(v, [0.05], 1.0)
        expected = float(np.mean(v)) + 0.05 * float(np.mean(plant.chi))
        self.assertAlmostEqual(float(np.mean(forced)), expected, delta=1e-8)

    def test_two_steps_equal_one_double_step(self) -> None:
        burgers = Burgers1dPlant()
        cases = (
            (DuffingPlant(), np.array([0.3, -0.2]), [0.4], 0.5),
            (burgers, 0.5 + 0.3 * np.sin(math.pi * burgers.grid), [0.05], 0.5),
            (burgers, 0.5 + 0.2 * np.sin(math.pi * burgers.grid), [-0.02], 0.25),
            (random_stable_linear_plant(3, 2, 5), np.array([0.1, -0.4, 0.2]), [0.3, -0.1], 0.2),
            (CircleRotationPlant(), np.array([1.0]), [0.5], 0.5),
        )
        for plant, x0, u, dt in cases:
            twice = plant.step(plant.step(x0, u, dt), u, dt)
            once = plant.step(x0, u, 2.0 * dt)
            self.assertLessEqual(float(np.max(np.abs(twice - once))), 1e-7, msg=plant.kind)

    def test_burgers_substep_halves_under_the_cfl_bound(self) -> None:
        plant = Burgers1dPlant()
        self.assertEqual(plant.substep_for(np.full(plant.n, 0.5)), 0.01)
        fast = plant.substep_for(np.full(plant.n, 4.0))
        self.assertLessEqual(fast * 4.0, plant.params.cfl * plant.dxi)
        self.assertEqual(0.01 / fast, 2.0 ** round(math.log2(0.01 / fast)))

    def test_burgers_grid_must_be_large_enough(self) -> None:
        with self.assertRaises(InvalidInputError):
            BurgersParams(n_grid=16)

    def test_step_rejects_bad_input(self) -> None:
        plant = DuffingPlant()
        with self.assertRaises(InvalidInputError):
            plant.step([0.0, 0.0], [0.0], 0.0)
        with self.assertRaises(InvalidInputError):
            plant.step([0.0], [0.0], 0.1)

    def test_blowup_raises_plant_step_error(self) -> None:
        plant = DuffingPlant()
        with np.errstate(over="ignore", invalid="ignore"):
            with self.assertRaises(PlantStepError):
                plant.step([1e120, 0.0], [0.0], 0.01)

    def test_descriptor_round_trip(self) -> None:
        for plant in (
            DuffingPlant(),
            CircleRotationPlant(0.0, 2.0),
            random_stable_linear_plant(3, 1, 0),
            Burgers1dPlant(BurgersParams(n_grid=64)),
        ):
            rebuilt = plant_from_descriptor(plant.descriptor())
            self.assertEqual(rebuilt.descriptor(), plant.descriptor())

    def test_affinity_check_separates_affine_and_nonaffine_plants(self) -> None:
        self.assertLessEqual(affinity_defect(DuffingPlant()), 1e-12)
        negative = SyntheticNonlinearInputPlant([[-1.0, 0.0], [0.0, -2.0]], [[1.0], [1.0]])
        self.assertFalse(negative.control_affine)
        self.assertGreater(affinity_defect(negative), 1e-3)


class TestSampling(unittest.TestCase):
    def test_scattered_sampling_pairs_each_state_with_every_level(self) -> None:
        spec = SamplingSpec(mode="scattered", n_initial=10, input_levels=((-1.0,), (1.0,)))
        data = sample_training_set(DuffingPlant(), spec, seed=3)
        self.assertEqual(data.m, 20)
        np.testing.assert_array_equal(data.x[:10], data.x[10:])
        np.testing.assert_array_equal(data.u[:10, 0], -1.0)
        self.assertTrue(data.has_derivatives)
        self.assertFalse(data.has_successors)
        self.assertEqual(data.metadata["plant"]["kind"], "duffing")

    def test_same_seed_same_data(self) -> None:
        spec = SamplingSpec(mode="scattered", n_initial=5, dt=0.1, input_levels=((0.0,), (1.0,)))
        a = sample_training_set(CircleRotationPlant(), spec, seed=1)
        b = sample_training_set(CircleRotationPlant(), spec, seed=1)
        self.assertEqual(a.fingerprint(), b.fingerprint())
        c = sample_training_set(CircleRotationPlant(), spec, seed=2)
        self.assertNotEqual(a.fingerprint(), c.fingerprint())

    def test_trajectories_do_not_depend_on_jobs(self) -> None:
        plant = random_stable_linear_plant(3, 1, 0)
        spec = SamplingSpec(
            mode="trajectories",
            n_initial=6,
            n_steps=5,
            dt=0.1,
            state_lo=(-1.0, -1.0, -1.0),
            state_hi=(1.0, 1.0, 1.0),
            hold_steps=2,
        )
        serial = sample_training_set(plant, spec, seed=11, jobs=1)
        parallel = sample_training_set(plant, spec, seed=11, jobs=3)
        self.assertEqual(serial.fingerprint(), parallel.fingerprint())
        self.assertEqual(serial.m, 30)
        np.testing.assert_array_equal(serial.step[:5], np.arange(5))
        # inputs are held for two steps
        np.testing.assert_array_equal(serial.u[0], serial.u[1])

    def test_level_probabilities_are_respected(self) -> None:
        spec = SamplingSpec(
            mode="trajectories",
            n_initial=1,
            n_steps=400,
            dt=0.5,
            input_levels=((-1.0,), (1.0,)),
            level_probabilities=(1.0, 0.0),
            derivatives=False,
        )
        data = sample_training_set(CircleRotationPlant(), spec, seed=0)
        np.testing.assert_array_equal(data.u[:, 0], -1.0)

    def test_invalid_specs_are_rejected(self) -> None:
        plant = DuffingPlant()
        with self.assertRaises(InvalidInputError):
            sample_training_set(plant, SamplingSpec(mode="trajectories", n_steps=0, dt=0.1), seed=0)
        with self.assertRaises(InvalidInputError):
            sample_training_set(plant, SamplingSpec(mode="scattered", input_levels=((2.0,),)), seed=0)
        with self.assertRaises(InvalidInputError):
            sample_training_set(
                plant,
                SamplingSpec(mode="scattered", input_levels=((1.0,),), level_probabilities=(0.5,)),
                seed=0,
            )

    def test_seed_mix_and_index_split(self) -> None:
        self.assertNotEqual(_seed_for_index(0, 0), _seed_for_index(0, 1))
        self.assertLess(_seed_for_index(2**63, 5), 2**64)
        self.assertEqual(_split_indices(list(range(5)), 2), [[0, 1, 2], [3, 4]])


if __name__ == "__main__":
    unittest.main()
