import sys
import unittest
from pathlib import Path

import numpy as np

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.controlled import ControlledPath
from roughfield.errors import InsufficientDataError, ShapeError
from roughfield.grid import GridPath, dyadic_grid
from roughfield.iag import (ItoProcessSpec, good_approximation_check, good_approximation_residuals,
                            iag_partition_sum, iag_weak_sample, interpolation_formula, interpolation_weak_sample,
                            mean_zero_test, realized_lift, terminal_field_realized, uniform_partition,
                            verify_dminus, verify_dminus_identity, verify_iag, verify_iag_weak,
                            verify_interpolation, weak_report)
from roughfield.library import driftless, identity, linear, ridge
from roughfield.lift import ito_lift, stratonovich_lift
from roughfield.noise import sample_brownian


def _vf():
    return driftless(ridge("sin", [[0.3]], [[[1.0]]], offset=[[1.0]]), linear([[-1.0]]))


class TestProcessSpec(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_kinds(self):
        with self.assertRaises(ValueError):
            ItoProcessSpec("jump")
        with self.assertRaises(ValueError):
            ItoProcessSpec("functional", drift=linear([[1.0]]))
        with self.assertRaises(ValueError):
            ItoProcessSpec("constant", drift=linear([[1.0]]), diffusion=ridge("sin", [[1.0]], [[[1.0]]]))
        vf = _vf()
        self.assertIs(ItoProcessSpec("flow").coefficients(vf), vf)

    def test_constant_coefficients(self):
        pair = ItoProcessSpec.constant([0.2], [[0.8]]).coefficients(_vf())
        x = np.array([[0.5], [-1.0]])
        np.testing.assert_allclose(pair.mu.value(x), [[0.2], [0.2]])
        np.testing.assert_allclose(pair.sigma.value(x)[:, 0, 0], [0.8, 0.8])

    def test_shape_mismatch(self):
        process = ItoProcessSpec.constant([0.2, 0.0], [[0.8], [0.0]])
        with self.assertRaises(ShapeError):
            process.coefficients(_vf())


class TestRealizedFields(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.W = sample_brownian(dyadic_grid(4), 1, 0)

    def test_lift_kinds(self):
        self.assertEqual(realized_lift(self.W, "strato", 2, 1).kind, "stratonovich")
        rW = ito_lift(self.W, 2, 1)
        self.assertIs(realized_lift(rW, "ito"), rW)
        with self.assertRaises(ValueError):
            realized_lift(rW, "strato")
        with self.assertRaises(ValueError):
            realized_lift(self.W, "young")

    def test_terminal_value(self):
        g = ridge("tanh", [1.0], [[1.0]])
        F = terminal_field_realized(_vf(), g, self.W, "ito", 2, 1)
        self.assertAlmostEqual(float(F.evaluate(16, [0.3]).F[0]), np.tanh(0.3))


class TestMeanZero(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.rng = np.random.default_rng(7)

    def test_centered_samples_pass(self):
        result = mean_zero_test(self.rng.standard_normal((400, 2)), sigmas=4.0)
        print(f"  z = {result['z']}, p = {result['p_value']:.3f}")
        self.assertTrue(result["passed"])

    def test_shifted_samples_fail(self):
        result = mean_zero_test(1.0 + 0.1 * self.rng.standard_normal(200))
        self.assertFalse(result["passed"])
        self.assertLess(result["p_value"], 1e-6)
        # slack absorbs the offset
        self.assertTrue(mean_zero_test(1.0 + 0.1 * self.rng.standard_normal(200), slack=1.1)["passed"])

    def test_zero_samples(self):
        self.assertTrue(mean_zero_test(np.zeros((5, 3)))["passed"])
        with self.assertRaises(InsufficientDataError):
            mean_zero_test(np.zeros((1, 3)))

    def test_weak_report(self):
        records = []
        for h in (0.25, 0.125):
            noise = self.rng.standard_normal(100)
            records.append([{"mesh": h, "lhs": [1.0 + e], "rhs": [1.0]} for e in noise])
        report = weak_report("synthetic", records, C=0.0, sigmas=4.0)
        self.assertTrue(report.passed)
        self.assertEqual(len(report.extras["tests"]), 2)
        shifted = [[dict(r, rhs=[0.0]) for r in recs] for recs in records]
        self.assertFalse(weak_report("shifted", shifted, C=0.0).passed)
        with self.assertRaises(InsufficientDataError):
            weak_report("tiny", [records[0][:1]])


class TestPartition(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.vf = _vf()
        self.f = ridge("tanh", [1.0], [[1.0]])

    def test_uniform_partition(self):
        np.testing.assert_array_equal(uniform_partition(16, 4), [0, 4, 8, 12, 16])
        with self.assertRaises(ValueError):
            uniform_partition(16, 3)
        with self.assertRaises(ValueError):
            uniform_partition(16, 0)

    def test_flow_process_is_exact(self):
        rW = ito_lift(sample_brownian(dyadic_grid(5), 1, 3), 4, 4)
        record = iag_partition_sum(self.vf, self.f, ItoProcessSpec("flow"), rW, [0.3])
        print(f"  defect {record['defect']:.2e}, S {record['S_pi']}, L {record['L_pi']}")
        self.assertLess(record["defect"], 1e-12)
        np.testing.assert_allclose(record["S_pi"], 0.0, atol=1e-15)
        np.testing.assert_allclose(record["L_pi"], 0.0, atol=1e-15)

    def test_constant_process_record(self):
        rW = ito_lift(sample_brownian(dyadic_grid(5), 1, 3), 4, 4)
        record = iag_partition_sum(self.vf, self.f, ItoProcessSpec.constant([0.2], [[0.8]]), rW, [0.3],
                                   partition=[0, 8, 16, 32])
        self.assertEqual(record["intervals"], 3)
        self.assertEqual(len(record["S_pi"]), 1)
        self.assertTrue(np.isfinite(record["defect"]))
        self.assertGreater(abs(record["lhs"][0]), 0.0)

    def test_partition_and_lift_checked(self):
        W = sample_brownian(dyadic_grid(4), 1, 3)
        with self.assertRaises(ValueError):
            iag_partition_sum(self.vf, self.f, ItoProcessSpec("flow"), ito_lift(W, 2, 1), [0.3],
                              partition=[0, 8, 4, 16])
        with self.assertRaises(ValueError):
            iag_partition_sum(self.vf, self.f, ItoProcessSpec("flow"), stratonovich_lift(W, 2, 1), [0.3])

    def test_flow_reports(self):
        drivers = [[ito_lift(sample_brownian(dyadic_grid(level), 1, r), 2, 50 + r) for r in range(3)]
                   for level in (3, 4)]
        report = verify_iag(self.vf, self.f, ItoProcessSpec("flow"), drivers, [0.3])
        self.assertTrue(report.exact)
        self.assertTrue(report.passed)
        self.assertEqual(len(report.extras["S_pi_cauchy"]), 1)
        weak = verify_iag_weak(self.vf, self.f, ItoProcessSpec("flow"), drivers, [0.3])
        self.assertTrue(weak.passed)

    def test_weak_sample(self):
        rW = ito_lift(sample_brownian(dyadic_grid(4), 1, 3), 2, 1)
        sample = iag_weak_sample(self.vf, self.f, ItoProcessSpec.constant([0.2], [[0.8]]), rW, [0.3])
        self.assertEqual(set(sample), {"mesh", "lhs", "rhs"})
        self.assertNotEqual(sample["rhs"][0], 0.0)


class TestInterpolation(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.vf = _vf()
        self.vf_hat = driftless(ridge("sin", [[0.15]], [[[1.0]]], offset=[[0.9]]), linear([[-1.0]], [0.2]))
        self.rZ = stratonovich_lift(sample_brownian(dyadic_grid(5), 1, 9), 4, 10)

    def test_equal_fields(self):
        record = interpolation_formula(self.vf, self.vf, self.rZ, [0.1], s=4, t=28)
        self.assertLess(record["defect"], 1e-10)
        self.assertLess(record["difference"], 1e-12)
        sample = interpolation_weak_sample(self.vf, self.vf, self.rZ, [0.1])
        self.assertEqual(sample["lhs"], [0.0])
        self.assertEqual(sample["rhs"], [0.0])

    def test_different_fields(self):
        record = interpolation_formula(self.vf, self.vf_hat, self.rZ, [0.1])
        print(f"  difference {record['difference']:.3e}, defect {record['defect']:.3e}")
        self.assertGreater(record["difference"], 1e-3)
        self.assertLess(record["defect"], record["difference"])

    def test_window_checked(self):
        with self.assertRaises(ValueError):
            verify_interpolation(self.vf, self.vf_hat, [[self.rZ]], [0.1], s_frac=0.5, t_frac=0.5)
        with self.assertRaises(ValueError):
            interpolation_weak_sample(self.vf, self.vf_hat, ito_lift(self.rZ.base, 2, 1), [0.1])

    def test_pair_shapes_checked(self):
        other = driftless(ridge("sin", [[0.3, 0.1]], [[[1.0], [1.0]]]), linear([[-1.0]]))
        with self.assertRaises(ShapeError):
            interpolation_formula(self.vf, other, self.rZ, [0.1])


class TestGoodApproximation(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_median_decreases(self):
        grid = dyadic_grid(10)
        eye = GridPath(grid, np.ones((grid.n_steps + 1, 1, 1)))
        cases = []
        for r in range(20):
            rZ = stratonovich_lift(sample_brownian(grid, 1, 200 + r), 2, 300 + r)
            cases.append((ControlledPath(rZ.base, eye), rZ))
        report = good_approximation_check(cases, [2, 4, 6])
        print(f"  medians {report.medians}, order {report.fitted_order}")
        self.assertGreater(report.medians[0], report.medians[-1])
        self.assertEqual(report.meshes, [0.25, 0.0625, 0.015625])

    def test_levels_must_fit(self):
        grid = dyadic_grid(4)
        rZ = stratonovich_lift(sample_brownian(grid, 1, 0), 2, 1)
        phi = ControlledPath(rZ.base, GridPath(grid, np.ones((17, 1, 1))))
        with self.assertRaises(ValueError):
            good_approximation_residuals(phi, rZ, [5])
        with self.assertRaises(ValueError):
            good_approximation_residuals(phi, ito_lift(rZ.base, 2, 1), [2])


class TestMalliavinIdentity(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.sigma = ridge("sin", [[1.0]], [[[1.0]]])
        self.mu = linear([[-0.5]])

    def test_identity_is_exact(self):
        rW = ito_lift(sample_brownian(dyadic_grid(6), 1, 5), 4, 6)
        record = verify_dminus_identity(self.mu, self.sigma, 0.5, rW, u=16)
        print(f"  defect {record['defect']:.2e}, max |A|, |B| {record['max_AB']:.3f}")
        self.assertLess(record["defect"], 1e-10)
        self.assertGreater(record["max_AB"], 0.0)

    def test_residual_does_not_shrink_with_mesh(self):
        # the scheme keeps the affine combination exactly, so no order is observable
        defects = []
        for level in (3, 5, 7):
            rW = ito_lift(sample_brownian(dyadic_grid(level), 1, 9), 2, 10)
            defects.append(verify_dminus_identity(self.mu, self.sigma, 0.5, rW)["defect"])
        print(f"  defects {[f'{d:.1e}' for d in defects]}")
        self.assertLess(max(defects), 1e-10)
        drivers = [[ito_lift(sample_brownian(dyadic_grid(level), 1, r), 2, 20 + r) for r in range(2)]
                   for level in (3, 4, 5)]
        report = verify_dminus(self.mu, self.sigma, 0.5, drivers, min_order=0.5)
        self.assertTrue(report.exact)
        self.assertIsNone(report.fitted_order)

    def test_report(self):
        drivers = [[ito_lift(sample_brownian(dyadic_grid(level), 1, r), 2, 10 + r) for r in range(2)]
                   for level in (3, 4)]
        report = verify_dminus(self.mu, self.sigma, 0.5, drivers, u_frac=0.25)
        self.assertTrue(report.passed)
        with self.assertRaises(ValueError):
            verify_dminus(self.mu, self.sigma, 0.5, drivers, u_frac=1.0)

    def test_scalar_only(self):
        rW = ito_lift(sample_brownian(dyadic_grid(3), 1, 5), 2, 6)
        with self.assertRaises(ShapeError):
            verify_dminus_identity(identity(2), self.sigma, 0.5, rW)


if __name__ == '__main__':
    unittest.main()
