"""
Blowup Lab, a numerical laboratory for large radial solutions of elliptic equations with convection
Copyright (C) 2026 Blowup Lab contributors

This program is free software; you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation; either version 2 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License along
with this program; if not, write to the Free Software Foundation, Inc.,
51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

import math
import os
import unittest
from unittest import mock

import numpy as np

from blowuplab import odesolver, transform
from blowuplab.odesolver import OdeSolution, SolverControl

SQRT2 = math.sqrt(2.0)
LOOSE = SolverControl(tol=1e-9, slope_tol=1e-10, rho_tol=1e-8, zero_margin=1e-10)


def cubic(t, z):
    return z**3


class FlooredField:
    z_floor = 0.0

    def __init__(self, function):
        self.function = function

    def __call__(self, t, z):
        return self.function(t, z)


def exact_cubic(rho, t):
    return SQRT2 / (rho - np.asarray(t))


class IntegrateTest(unittest.TestCase):
    def test_exact_cubic_blowup(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2, 0.0)
        self.assertEqual(solution.classification, "blow_up")
        self.assertLess(abs(solution.t_star), 1e-4)
        window = solution.t <= -1e-3
        error = np.abs(solution.z[window] / exact_cubic(0.0, solution.t[window]) - 1.0)
        self.assertLess(float(np.max(error)), 1e-6)

    def test_linear_field(self):
        solution = odesolver.integrate_ivp(lambda t, z: 0.0, -1.0, 1.0, 2.0, -0.5)
        self.assertEqual(solution.classification, "reached_end")
        self.assertEqual(solution.t[-1], -0.5)
        self.assertAlmostEqual(solution.z[-1], 2.0, delta=1e-12)

    def test_small_data_stays_bounded(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, 0.1, 0.0, -0.01)
        self.assertEqual(solution.classification, "reached_end")
        self.assertEqual(solution.t[-1], -0.01)
        self.assertTrue(np.all(np.diff(solution.z) >= 0.0))
        self.assertLess(solution.z[-1], 0.11)

    def test_lands_on_requested_points(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, 0.1, 0.0, -0.01, t_eval=[-0.75, -0.3])
        self.assertIn(-0.75, list(solution.t))
        self.assertIn(-0.3, list(solution.t))

    def test_bounded_at_zero(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2 / 1.5, SQRT2 / 2.25, 0.0, LOOSE)
        self.assertEqual(solution.classification, "bounded_at_zero")
        self.assertAlmostEqual(solution.t[-1], -1e-10, delta=1e-22)
        self.assertIsNone(solution.t_star)

    def test_invalid_interval(self):
        with self.assertRaises(ValueError):
            odesolver.integrate_ivp(cubic, -1.0, 1.0, 0.0, 0.5)
        with self.assertRaises(ValueError):
            odesolver.integrate_ivp(cubic, -1.0, 1.0, 0.0, -2.0)

    def test_floor_crossing_leaves_domain(self):
        field = FlooredField(lambda t, z: 0.0)
        solution = odesolver.integrate_ivp(field, -1.0, 1.0, -4.0, 0.0, LOOSE)
        self.assertEqual(solution.classification, "left_domain")
        self.assertGreater(solution.z[-1], 0.0)
        self.assertAlmostEqual(solution.t[-1], -0.75, delta=1e-6)

    def test_step_budget(self):
        with self.assertRaises(odesolver.IterationLimit):
            odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2, 0.0, SolverControl(max_steps=10))

    def test_hermite_sampling(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2 / 1.5, SQRT2 / 2.25, -0.1)
        for t in [-0.9, -0.5, -0.2]:
            self.assertAlmostEqual(solution.at(t), float(exact_cubic(0.5, t)), delta=1e-6)

    def test_blowup_time_decreases_with_slope(self):
        times = [odesolver.integrate_ivp(cubic, -1.0, 1.0, slope, 0.0, LOOSE).t_star for slope in (4.0, 6.0, 8.0)]
        self.assertTrue(all(time is not None for time in times))
        self.assertGreater(times[0], times[1])
        self.assertGreater(times[1], times[2])

    def test_tighter_tolerance_reduces_error(self):
        errors = []
        for tol in (1e-9, 1e-9 / 16):
            ctrl = SolverControl(tol=tol)
            solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2 / 1.5, SQRT2 / 2.25, -0.1, ctrl)
            errors.append(abs(solution.z[-1] - float(exact_cubic(0.5, -0.1))))
        self.assertLessEqual(errors[1], 0.5 * errors[0])

    def test_solution_json(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2, 0.0, LOOSE)
        summary = solution.to_json()
        self.assertEqual(summary["classification"], "blow_up")
        self.assertIn("alpha", summary)
        self.assertAlmostEqual(summary["alpha"], 1.0, delta=1e-2)
        self.assertEqual(summary["points"], len(solution.rows()))


class DirichletTest(unittest.TestCase):
    def test_constant_field(self):
        solution = odesolver.solve_dirichlet_bvp(lambda t, z: 2.0 + 0.0 * z, -2.0, -1.0, 0.0)
        self.assertEqual(solution.t[200], -1.5)
        self.assertAlmostEqual(solution.z[200], -0.25, delta=1e-12)
        self.assertAlmostEqual(solution.zprime[0], -1.0, delta=1e-9)

    def test_zero_field(self):
        solution = odesolver.solve_dirichlet_bvp(lambda t, z: 0.0 * z, -2.0, -1.0, 3.0)
        np.testing.assert_allclose(solution.z, 3.0)
        np.testing.assert_allclose(solution.zprime, 0.0, atol=1e-14)

    def test_cubic_residual(self):
        solution = odesolver.solve_dirichlet_bvp(cubic, -2.0, -1.0, 2.0)
        spacing = solution.t[1] - solution.t[0]
        second = (solution.z[2:] - 2.0 * solution.z[1:-1] + solution.z[:-2]) / spacing**2
        np.testing.assert_allclose(second, solution.z[1:-1] ** 3, rtol=1e-6, atol=1e-6)
        self.assertTrue(np.all(solution.z <= 2.0))

    def test_supercritical_bratu(self):
        with self.assertRaises(odesolver.NoConvergence):
            odesolver.solve_dirichlet_bvp(lambda t, z: -10.0 * np.exp(z), -2.0, -1.0, 0.0)

    def test_invalid_interval(self):
        with self.assertRaises(ValueError):
            odesolver.solve_dirichlet_bvp(cubic, -1.0, 0.0, 1.0)


class ExtensionTest(unittest.TestCase):
    def test_cubic_blows_up(self):
        t_star, extended = odesolver.dirichlet_extension_experiment(cubic, -2.0, -1.0, 2.0, LOOSE)
        self.assertIsNotNone(t_star)
        self.assertGreater(t_star, -1.0)
        self.assertLess(t_star, 0.0)
        self.assertEqual(extended.classification, "blow_up")
        self.assertTrue(np.all(np.diff(extended.t) > 0.0))

    def test_zero_field_bounded(self):
        t_star, extended = odesolver.dirichlet_extension_experiment(lambda t, z: 0.0 * z, -2.0, -1.0, 1.0, LOOSE)
        self.assertIsNone(t_star)
        self.assertEqual(extended.classification, "bounded_at_zero")

    def test_linear_growth_bounded(self):
        t_star, extended = odesolver.dirichlet_extension_experiment(lambda t, z: -t * z, -2.0, -1.0, 1.0, LOOSE)
        self.assertIsNone(t_star)
        self.assertTrue(np.all(np.isfinite(extended.z)))

    def test_negative_field_rejected(self):
        bvp = odesolver.solve_dirichlet_bvp(lambda t, z: 2.0 + 0.0 * z, -2.0, -1.0, 0.0)
        with self.assertRaises(ValueError):
            odesolver.find_blowup_extension(lambda t, z: -2.0 + 0.0 * z, bvp)


class ShootingTest(unittest.TestCase):
    def test_exact_family_slope(self):
        result = odesolver.shoot_blowup_at(cubic, -1.0, 2.0 * SQRT2, -0.5, LOOSE)
        self.assertAlmostEqual(result.slope, 4.0 * SQRT2, delta=1e-4)
        self.assertLess(abs(result.achieved_rho + 0.5), 1e-6)
        low, high = result.bracket
        self.assertLessEqual(low, result.slope)
        self.assertLessEqual(result.slope, high)

    def test_target_must_be_negative(self):
        with self.assertRaises(ValueError):
            odesolver.shoot_blowup_at(cubic, -1.0, 1.0, 0.0)
        with self.assertRaises(ValueError):
            odesolver.shoot_blowup_at(cubic, -1.0, 1.0, -2.0)


class MinimalSolutionTest(unittest.TestCase):
    def test_exact_family(self):
        solution = odesolver.minimal_large_solution(cubic, -1.0, SQRT2, LOOSE)
        self.assertAlmostEqual(solution.zprime[0], SQRT2, delta=1e-4)
        self.assertEqual(solution.classification, "blow_up")
        grid = np.linspace(-1.0, -1e-2, 50)
        np.testing.assert_allclose(solution.at(grid), exact_cubic(0.0, grid), rtol=1e-5)

    def test_slopes_around_critical(self):
        above = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2 + 0.1, 0.0, LOOSE)
        below = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2 - 0.1, 0.0, LOOSE)
        self.assertEqual(above.classification, "blow_up")
        self.assertLess(above.t_star, 0.0)
        self.assertEqual(below.classification, "bounded_at_zero")

    def test_divergent_field(self):
        field = FlooredField(lambda t, z: z**3 / t**4)
        ctrl = SolverControl(tol=1e-8, zero_margin=1e-8, slope_tol=1e-8)
        with self.assertRaises(odesolver.BracketFailure):
            odesolver.minimal_large_solution(field, -1.0, 1.0, ctrl)

    def test_divergent_transformed_field(self):
        spec = transform.make_problem_spec(3, "0", "s^3")
        field = transform.TransformedField(transform.build_transform(spec))
        ctrl = SolverControl(tol=1e-8, zero_margin=1e-8, slope_tol=1e-8)
        with self.assertRaises(odesolver.BracketFailure):
            odesolver.minimal_large_solution(field, -0.5, 1.0, ctrl)

    def test_asymptote_refit_recorded(self):
        ctrl = SolverControl(tol=1e-10, rho_tol=1e-4, zero_margin=1e-3)
        with mock.patch.object(odesolver, "_critical_slope", return_value=(SQRT2, SQRT2, 1)):
            solution = odesolver.minimal_large_solution(cubic, -1.0, SQRT2, ctrl)
        self.assertTrue(solution.refit)
        self.assertEqual(solution.classification, "blow_up")
        self.assertAlmostEqual(solution.t_star, 0.0, delta=1e-4)
        self.assertEqual(solution.to_json()["blowup_source"], "refit")

    def test_detected_blowup_recorded(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2 + 0.1, 0.0, LOOSE)
        self.assertFalse(solution.refit)
        self.assertEqual(solution.to_json()["blowup_source"], "detected")
        bounded = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2 - 0.1, 0.0, LOOSE)
        self.assertNotIn("blowup_source", bounded.to_json())


class TrialTest(unittest.TestCase):
    def run_trial(self, state, horizon=-0.5):
        error = odesolver.StepUnderflow("Step underflow", state)
        with mock.patch.object(odesolver, "integrate_ivp", side_effect=error):
            return odesolver._run_trial(cubic, -1.0, 1.0, 2.0, -0.25, horizon, LOOSE)

    def test_rising_before_horizon_is_early(self):
        self.assertEqual(self.run_trial((-0.7, 50.0, 900.0)), ("early", None))

    def test_rising_after_horizon_is_bounded(self):
        self.assertEqual(self.run_trial((-0.3, 50.0, 900.0)), ("bounded", None))

    def test_falling_leaves_domain(self):
        self.assertEqual(self.run_trial((-0.7, 0.01, -3.0)), ("left", None))

    def test_without_state_raises(self):
        with self.assertRaises(odesolver.StepUnderflow):
            self.run_trial(None)

    def test_underflow_state_attached(self):
        error = odesolver.StepUnderflow("Step underflow", (-0.1, 2.0, 3.0))
        self.assertEqual(error.state, (-0.1, 2.0, 3.0))
        self.assertIsNone(odesolver.StepUnderflow("Step underflow").state)

    def test_shooting_skips_underflowing_trials(self):
        real = odesolver.integrate_ivp

        def integrate(F, t0, z0, zp0, t_end, ctrl, t_eval=None):
            if zp0 > 8.0:
                raise odesolver.StepUnderflow("Step underflow", (-0.9, 1e4, 1e6))
            return real(F, t0, z0, zp0, t_end, ctrl, t_eval)

        with mock.patch.object(odesolver, "integrate_ivp", side_effect=integrate):
            result = odesolver.shoot_blowup_at(cubic, -1.0, 2.0 * SQRT2, -0.5, LOOSE)
        self.assertAlmostEqual(result.slope, 4.0 * SQRT2, delta=1e-4)

    def test_large_solutions_merge(self):
        def field(t, z):
            return z**3 / -t

        first = odesolver.minimal_large_solution(field, -1.0, SQRT2)
        second = odesolver.minimal_large_solution(field, -1.0, 2.0 * SQRT2)
        gaps = [abs(first.at(t) - second.at(t)) for t in (-0.1, -0.03, -0.01)]
        self.assertGreater(gaps[0], gaps[1])
        self.assertGreater(gaps[1], gaps[2])
        self.assertLess(abs(first.at(-1e-3) - second.at(-1e-3)), 1e-3)

    def test_invalid_anchor(self):
        with self.assertRaises(ValueError):
            odesolver.minimal_large_solution(cubic, 0.0, 1.0)
        with self.assertRaises(ValueError):
            odesolver.minimal_large_solution(cubic, -1.0, 0.0)


class SequenceTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.pair = odesolver.build_sequences(cubic, -1.0, 1.0, 4.0, 3, LOOSE)

    def test_targets(self):
        self.assertEqual(self.pair.rhos, [-0.5, -0.25, -0.125])
        for result, rho in zip(self.pair.upper, self.pair.rhos):
            self.assertLess(abs(result.achieved_rho - rho), 1e-6)

    def test_ordering(self):
        self.assertTrue(self.pair.ordered)
        self.assertLessEqual(self.pair.max_violation, 0.0)
        lower_slopes = [float(solution.zprime[0]) for solution in self.pair.lower]
        self.assertEqual(lower_slopes, sorted(lower_slopes))
        self.assertLess(lower_slopes[-1], float(self.pair.lower_limit.zprime[0]))
        upper_slopes = [result.slope for result in self.pair.upper]
        self.assertEqual(upper_slopes, sorted(upper_slopes, reverse=True))

    def test_lower_bounded(self):
        for solution in self.pair.lower:
            self.assertEqual(solution.classification, "bounded_at_zero")
            self.assertTrue(odesolver.check_convexity(solution))

    def test_json(self):
        summary = self.pair.to_json()
        self.assertTrue(summary["ordered"])
        self.assertEqual(len(summary["upper_slopes"]), 3)

    def test_empty_sequence(self):
        with self.assertRaises(ValueError):
            odesolver.build_sequences(cubic, -1.0, 1.0, 4.0, 0)


class CheckTest(unittest.TestCase):
    def make(self, t, z, zprime):
        return OdeSolution(np.array(t), np.array(z), np.array(zprime), "reached_end", None, 1e-10)

    def test_convexity(self):
        self.assertTrue(odesolver.check_convexity(self.make([0, 1, 2], [0, 1, 3], [0.5, 1.5, 2.5])))
        self.assertFalse(odesolver.check_convexity(self.make([0, 1, 2], [0, 1, 1.5], [1.0, 0.75, 0.25])))

    def test_exact_solution_convex(self):
        solution = odesolver.integrate_ivp(cubic, -1.0, SQRT2, SQRT2, 0.0, LOOSE)
        self.assertTrue(odesolver.check_convexity(solution))

    def test_ordering(self):
        lower = self.make([-1.0, -0.5, -0.25], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
        upper = self.make([-1.0, -0.5, -0.1], [1.0, 2.5, 9.0], [1.0, 1.0, 1.0])
        self.assertLessEqual(odesolver.check_ordering(lower, upper, 1e-10), 0.0)
        self.assertGreater(odesolver.check_ordering(upper, lower, 1e-10), 0.0)

    def test_disjoint_grids(self):
        lower = self.make([-1.0], [1.0], [1.0])
        upper = self.make([-0.5], [0.0], [1.0])
        self.assertEqual(odesolver.check_ordering(lower, upper, 1e-10), -math.inf)


class WorkerCountTest(unittest.TestCase):
    def test_default(self):
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(odesolver.worker_count(), 1)

    def test_override(self):
        with mock.patch.dict(os.environ, {odesolver.THREADS_ENV: "4"}):
            self.assertEqual(odesolver.worker_count(), 4)

    def test_invalid(self):
        for raw in ["zero", "0"]:
            with mock.patch.dict(os.environ, {odesolver.THREADS_ENV: raw}):
                with self.assertRaises(odesolver.InputError):
                    odesolver.worker_count()
