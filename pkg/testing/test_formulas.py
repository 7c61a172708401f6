import sys
import unittest
from pathlib import Path

import numpy as np

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.controlled import static_field
from roughfield.errors import ShapeError
from roughfield.flows import backward_flow_jet, solution_jet
from roughfield.formulas import (RIWCase, rag_residual, rag_terms, riw_residual, transport_residual, verify_rag,
                                 verify_riw, verify_transport)
from roughfield.grid import dyadic_grid
from roughfield.library import driftless, linear, ridge
from roughfield.lift import canonical_lift, ito_lift, smooth_driver, stratonovich_lift
from roughfield.noise import sample_brownian


def _smooth(level):
    return canonical_lift(smooth_driver([0.8], [6.0], [0.3]), dyadic_grid(level), refine=16)


class TestTransport(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.vf = driftless(ridge("sin", [[0.1]], [[[1.0]]], offset=[[1.0]]), linear([[-1.0]]))
        self.g = ridge("tanh", [1.0], [[1.0]])
        self.points = np.linspace(-1.0, 1.0, 5)[:, None]

    def test_flow_consistency_is_exact(self):
        rZ = stratonovich_lift(sample_brownian(dyadic_grid(4), 1, 5), 4, 6)
        record = transport_residual(self.vf, self.g, rZ, self.points, s=3)
        print(f"  drift {record['drift']:.2e}, terminal {record['terminal']:.2e}, jet {record['jet']:.2e}")
        self.assertLess(record["consistency"], 1e-10)
        self.assertLess(record["terminal"], 1e-14)
        self.assertEqual(record["defect"], record["residual"])
        self.assertGreater(record["defect"], 1e-8)

    def test_residual_converges(self):
        coarse = transport_residual(self.vf, self.g, _smooth(4), self.points)["defect"]
        fine = transport_residual(self.vf, self.g, _smooth(7), self.points)["defect"]
        print(f"  residual at level 4 {coarse:.3e}, at level 7 {fine:.3e}")
        self.assertLess(fine, 0.5 * coarse)

    def test_geometric_scaling_closed_form(self):
        # sigma(x) = x, mu = 0: u_t(x) = g(x exp(Z_T - Z_t))
        vf = driftless(linear([[[1.0]]]))
        errors = []
        for level in (5, 8):
            rZ = _smooth(level)
            u = backward_flow_jet(vf, rZ, self.g)
            Z = rZ.base.values[:, 0]
            ks = np.repeat(np.arange(Z.size), self.points.shape[0])
            xs = np.tile(self.points, (Z.size, 1))
            expected = np.tanh(xs[:, 0] * np.exp(Z[-1] - Z[ks]))
            errors.append(float(np.max(np.abs(u.evaluate_batch(ks, xs).F[:, 0] - expected))))
        print(f"  closed-form error at level 5 {errors[0]:.2e}, at level 8 {errors[1]:.2e}")
        self.assertLess(errors[1], 1e-3)
        self.assertLess(errors[1], 0.1 * errors[0])

    def test_needs_geometric_driver(self):
        rW = ito_lift(sample_brownian(dyadic_grid(4), 1, 5), 4, 6)
        with self.assertRaises(ValueError):
            transport_residual(self.vf, self.g, rW, self.points)

    def test_report(self):
        drivers = [[stratonovich_lift(sample_brownian(dyadic_grid(level), 1, r), 2, 100 + r) for r in range(2)]
                   for level in (3, 4)]
        report = verify_transport(self.vf, self.g, drivers, self.points[:2])
        print(f"  {report.summary()}")
        self.assertTrue(report.passed)
        self.assertEqual(report.extras["replicas"], 2)
        self.assertIn("consistency", report.extras)
        self.assertFalse(report.exact)
        strict = verify_transport(self.vf, self.g, drivers, self.points[:2], min_order=5.0)
        self.assertFalse(strict.passed)


class TestRoughItoWentzell(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.vf = driftless(ridge("cos", [[0.5]], [[[1.0]]], offset=[[1.0]]), linear([[-0.5]]))

    def _record(self, level):
        rX = _smooth(level)
        scp = solution_jet(self.vf, rX, 0, [0.2])
        F = static_field(ridge("sin", [1.0], [[1.0]]), rX.grid, 1)
        return riw_residual(F, scp, rX)

    def test_defect_decreases_under_refinement(self):
        coarse, fine = self._record(4), self._record(7)
        print(f"  defect at level 4 {coarse['defect']:.3e}, at level 7 {fine['defect']:.3e}")
        self.assertLess(fine["defect"], coarse["defect"])

    def test_rate_form_for_lipschitz_brackets(self):
        record = self._record(5)
        self.assertIn("rate_defect", record)
        # the canonical bracket vanishes, so both forms agree
        self.assertAlmostEqual(record["rate_defect"], record["defect"], delta=1e-10)

    def test_ito_driver_has_no_rate_form(self):
        rW = ito_lift(sample_brownian(dyadic_grid(5), 1, 7), 4, 8)
        scp = solution_jet(self.vf, rW, 0, [0.2])
        F = static_field(ridge("sin", [1.0], [[1.0]]), rW.grid, 1)
        record = riw_residual(F, scp, rW)
        self.assertNotIn("rate_defect", record)
        self.assertTrue(np.isfinite(record["defect"]))

    def test_driver_dimension_checked(self):
        rX = _smooth(4)
        scp = solution_jet(self.vf, rX, 0, [0.2])
        rX2 = stratonovich_lift(sample_brownian(rX.grid, 2, 1), 2, 2)
        F = static_field(ridge("sin", [1.0], [[1.0]]), rX.grid, 2)
        with self.assertRaises(ShapeError):
            riw_residual(F, scp, rX2)

    def test_report_over_levels(self):
        cases = []
        for level in (4, 5, 6):
            rX = _smooth(level)
            scp = solution_jet(self.vf, rX, 0, [0.2])
            cases.append([RIWCase(static_field(ridge("sin", [1.0], [[1.0]]), rX.grid, 1), scp, rX)])
        report = verify_riw(cases, min_order=0.5)
        print(f"  {report.summary()}")
        self.assertTrue(report.passed)
        self.assertIn("rate_defect", report.extras)


class TestAlekseevGroebner(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.vf = driftless(ridge("sin", [[0.3]], [[[1.0]]], offset=[[1.0]]), linear([[-1.0]]))
        self.vf_hat = driftless(ridge("cos", [[0.5]], [[[1.0]]], offset=[[1.0]]), linear([[-0.5]], [0.2]))
        self.g = ridge("tanh", [1.0], [[1.0]])

    def test_same_fields_give_no_defect(self):
        rZ = stratonovich_lift(sample_brownian(dyadic_grid(5), 1, 3), 4, 4)
        scp = solution_jet(self.vf, rZ, 0, [0.4])
        record = rag_residual(self.vf, scp, self.g, rZ)
        print(f"  defect {record['defect']:.2e}, lhs {record['lhs']:.2e}")
        self.assertLess(record["defect"], 1e-10)
        self.assertLess(record["rough"], 1e-10)

    def test_terms_cover_the_window(self):
        rX = _smooth(5)
        scp = solution_jet(self.vf_hat, rX, 0, [0.4])
        terms = rag_terms(self.vf, scp, self.g, rX, start=4, terminal=20)
        self.assertEqual(terms["lhs"].shape, (17, 1))
        np.testing.assert_allclose(terms["lebesgue"][0], 0.0)
        with self.assertRaises(ValueError):
            rag_terms(self.vf, scp, self.g, rX, start=20, terminal=20)

    def test_defect_decreases_under_refinement(self):
        cases = []
        for level in (4, 5, 6, 7):
            rX = _smooth(level)
            cases.append([(solution_jet(self.vf_hat, rX, 0, [0.4]), rX)])
        report = verify_rag(self.vf, self.g, cases, min_order=0.5)
        print(f"  {report.summary()}, medians {report.medians}")
        self.assertGreater(report.medians[0], report.medians[-1])
        self.assertTrue(report.passed)

    def test_needs_geometric_driver(self):
        rW = ito_lift(sample_brownian(dyadic_grid(4), 1, 5), 4, 6)
        scp = solution_jet(self.vf, rW, 0, [0.4])
        with self.assertRaises(ValueError):
            rag_residual(self.vf, scp, self.g, rW)


if __name__ == '__main__':
    unittest.main()
