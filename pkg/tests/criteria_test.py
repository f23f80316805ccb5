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
import unittest

from blowuplab import criteria, transform
from blowuplab.odesolver import SolverControl

REGION = (1.0, 1.0, 10.0, 10.0)


def make_spec(f, g=None, n=3, h="0"):
    return transform.make_problem_spec(n, h, f, g=g)


class SigmaTest(unittest.TestCase):
    def test_known_dimensions(self):
        self.assertAlmostEqual(criteria.sigma_n(2), 2.0 * math.pi, delta=1e-12)
        self.assertAlmostEqual(criteria.sigma_n(3), 4.0 * math.pi, delta=1e-12)
        self.assertAlmostEqual(criteria.sigma_n(4), 2.0 * math.pi**2, delta=1e-12)


class SuperlinearityTest(unittest.TestCase):
    def check(self, text):
        return criteria.check_superlinearity(make_spec(text).f, REGION, 8)

    def test_cubic(self):
        verdict = self.check("s^3")
        self.assertTrue(verdict.passed)
        self.assertAlmostEqual(verdict.lambda_hat, 3.0, delta=1e-9)

    def test_linear(self):
        verdict = self.check("s")
        self.assertFalse(verdict.passed)
        self.assertAlmostEqual(verdict.lambda_hat, 1.0, delta=1e-9)

    def test_radial_weight(self):
        verdict = self.check("r^(-3)*s^2")
        self.assertTrue(verdict.passed)
        self.assertAlmostEqual(verdict.lambda_hat, 2.0, delta=1e-9)

    def test_witness_at_infimum(self):
        verdict = self.check("s^3 + s")
        self.assertEqual(verdict.witness[1], 1.0)
        self.assertEqual(verdict.witness[2], 2.0)

    def test_non_positive(self):
        with self.assertRaises(criteria.NonPositiveSample) as context:
            self.check("s - 2")
        self.assertLessEqual(context.exception.s, 2.0)

    def test_invalid_region(self):
        with self.assertRaises(ValueError):
            criteria.check_superlinearity(make_spec("s^3").f, (2.0, 1.0, 1.0, 2.0), 8)


class MonotonicityTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.map = transform.build_transform(make_spec("s^3"))

    def direction(self, g, region, grid=24):
        return criteria.check_c3_monotonicity(make_spec("s^3", g=g), self.map, "g", region, grid)

    def test_increasing(self):
        self.assertEqual(self.direction("r^(-3)*s^3", REGION).direction, "increasing")

    def test_decreasing(self):
        self.assertEqual(self.direction("exp(r)*s^3", (1.0, 1.0, 20.0, 2.0)).direction, "decreasing")

    def test_oscillating(self):
        verdict = self.direction("(2+sin(r))*s^3", (1.0, 1.0, 30.0, 2.0), 60)
        self.assertEqual(verdict.direction, "fail")
        self.assertIsNotNone(verdict.witness)
        self.assertEqual(verdict.to_json()["status"], "fail")

    def test_missing_g(self):
        with self.assertRaises(ValueError):
            criteria.check_c3_monotonicity(make_spec("s^3"), self.map, "g", REGION)

    def test_below_table(self):
        with self.assertRaises(transform.OutOfRange):
            criteria.check_c3_monotonicity(make_spec("s^3"), self.map, "f", (0.5, 1.0, 2.0, 2.0))

    def test_field_in_t(self):
        field = transform.TransformedField(self.map)
        t_values = [-0.9, -0.5, -0.1]
        self.assertEqual(criteria.check_field_monotonicity(field, t_values, [1.0, 2.0]).direction, "increasing")


class ExistenceTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.map = transform.build_transform(make_spec("s^3"))

    def test_finite(self):
        spec = make_spec("r^(-3)*s^3")
        [result] = criteria.existence_criterion(self.map, spec, [1.0])
        self.assertTrue(result.finite)
        self.assertAlmostEqual(result.value, 1.0, delta=1e-6)

    def test_finite_from_inner_time(self):
        [result] = criteria.existence_criterion(self.map, make_spec("r^(-3)*s^3"), [2.0], -0.5)
        self.assertAlmostEqual(result.value, 4.0, delta=1e-6)

    def test_logarithmic_divergence(self):
        [result] = criteria.existence_criterion(self.map, make_spec("r^(-2)*s^3"), [1.0])
        self.assertFalse(result.finite)
        self.assertIsNone(result.value)
        for block in result.evidence:
            self.assertAlmostEqual(block, math.log(2.0), delta=1e-8)

    def test_entire_space_divergence(self):
        results = criteria.existence_criterion(self.map, make_spec("s^3"), [2.0, 4.0])
        self.assertFalse(any(result.finite for result in results))
        self.assertIsNone(criteria.existence_threshold(results))

    def test_scaling(self):
        plain = criteria.existence_criterion(self.map, make_spec("r^(-3)*s^3"), [2.0, 4.0])
        scaled = criteria.existence_criterion(self.map, make_spec("5*(r^(-3)*s^3)"), [2.0, 4.0])
        for a, b in zip(plain, scaled):
            self.assertEqual(a.finite, b.finite)
            self.assertAlmostEqual(b.value / a.value, 5.0, delta=5e-8)

    def test_threshold(self):
        results = criteria.existence_criterion(self.map, make_spec("r^(-3)*s^3"), [4.0, 2.0])
        self.assertEqual(criteria.existence_threshold(results), 2.0)
        self.assertEqual([result.s for result in results], [4.0, 2.0])

    def test_preconditions(self):
        spec = make_spec("r^(-3)*s^3")
        with self.assertRaises(ValueError):
            criteria.existence_criterion(self.map, spec, [0.5])
        with self.assertRaises(ValueError):
            criteria.existence_criterion(self.map, spec, [1.0], 0.0)


class IdentityTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.map = transform.build_transform(make_spec("s^3"))

    def test_inverse_square_weight(self):
        self.assertLess(criteria.klk_identity_residual(make_spec("r^(-3)*s^3"), self.map, 1.0, 1.0), 1e-6)

    def test_inverse_quartic_weight(self):
        self.assertLess(criteria.klk_identity_residual(make_spec("r^(-4)*s^3"), self.map, 1.0, 1.0), 1e-6)

    def test_several_points(self):
        spec = make_spec("r^(-3)*s^3")
        for R, s in [(1.0, 2.0), (3.0, 1.5), (10.0, 4.0)]:
            with self.subTest(R=R, s=s):
                self.assertLess(criteria.klk_identity_residual(spec, self.map, R, s), 1e-5)

    def test_divergent(self):
        with self.assertRaises(criteria.DivergentSide):
            criteria.klk_identity_residual(make_spec("r^(-2)*s^3"), self.map, 1.0, 1.0)


class ReportTest(unittest.TestCase):
    def test_exists(self):
        report = criteria.assemble_report(make_spec("r^(-3)*s^3", g="r^(-3)*s^3"), grid=8)
        self.assertEqual(report.verdict, "ExistsRadial")
        self.assertEqual(report.exit_code, 0)
        self.assertEqual(report.threshold, 2.0)
        self.assertLess(report.klk_residual, 1e-5)
        self.assertTrue(report.c1_positive.passed)
        self.assertTrue(report.f_dominates_l.passed)
        self.assertEqual(report.c3_monotone.direction, "increasing")
        self.assertTrue(report.F_superlinear.passed)
        self.assertAlmostEqual(report.F_z_superlinear.lambda_hat, 2.0, delta=1e-3)
        summary = report.to_json()
        self.assertEqual(summary["verdict"], "ExistsRadial")
        self.assertEqual(len(summary["existence"]), 3)

    def test_plane(self):
        report = criteria.assemble_report(make_spec("s^3", n=2), grid=8)
        self.assertEqual(report.verdict, "NoSolutionExpected")
        self.assertEqual(report.exit_code, 3)
        self.assertEqual(report.existence, [])
        self.assertEqual(report.to_json()["growth"]["status"], "divergent")

    def test_critical_convection(self):
        report = criteria.assemble_report(transform.osserman_spec(3, -1.0), grid=8)
        self.assertEqual(report.verdict, "NoSolutionExpected")

    def test_divergent_criterion(self):
        report = criteria.assemble_report(make_spec("s^3"), grid=8)
        self.assertTrue(report.growth.finite)
        self.assertEqual(report.verdict, "NoSolutionExpected")
        self.assertIsNone(report.klk_residual)

    def test_linear_inconclusive(self):
        report = criteria.assemble_report(make_spec("r^(-3)*s"), grid=8)
        self.assertFalse(report.c2_superlinear.passed)
        self.assertEqual(report.verdict, "Inconclusive")
        self.assertEqual(report.exit_code, 4)

    def test_failed_check_is_reported(self):
        report = criteria.assemble_report(make_spec("r^(-3)*(s-5)"), grid=8, s_values=[8.0])
        self.assertIsInstance(report.c2_superlinear, criteria.CheckError)
        self.assertEqual(report.c2_superlinear.kind, "NonPositiveSample")
        self.assertFalse(report.c1_positive.passed)
        self.assertEqual(report.verdict, "Inconclusive")

    def test_exponential_convection_tabulates(self):
        report = criteria.assemble_report(make_spec("s^3", n=2, h="r"), grid=8)
        self.assertTrue(report.growth.finite)
        self.assertTrue(report.c1_positive.passed)
        for name, value in report._asdict().items():
            with self.subTest(item=name):
                if isinstance(value, criteria.CheckError):
                    self.assertNotEqual(value.kind, "QuadratureFailure")


class ExtensionTest(unittest.TestCase):
    def test_blowup_annulus(self):
        spec = make_spec("r^(-3)*s^3", g="r^(-3)*s^3")
        transform_map = transform.build_transform(spec)
        ctrl = SolverControl(tol=1e-8, bvp_nodes=101)
        result = criteria.extension_experiment(transform_map, -0.9, -0.5, 6.0, ctrl)
        self.assertIsNotNone(result.t2)
        self.assertGreater(result.t2, -0.5)
        self.assertLess(result.t2, 0.0)
        self.assertAlmostEqual(result.r2 * -result.t2, 1.0, delta=1e-6)
        self.assertEqual(result.to_json()["solution"]["classification"], "blow_up")

    def test_requires_g(self):
        transform_map = transform.build_transform(make_spec("s^3"))
        with self.assertRaises(ValueError):
            criteria.extension_experiment(transform_map, -0.9, -0.5, 2.0)
