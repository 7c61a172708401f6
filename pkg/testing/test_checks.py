import sys
import unittest
from pathlib import Path

import numpy as np
from scipy.linalg import expm

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.checks import (ALGEBRAIC_KEYS, algebraic_defects, bracket_record, bracket_report, exactness_report,
                               geometric_error, linear_jacobian_error, verify_rde_oracle)
from roughfield.errors import InsufficientDataError, ShapeError
from roughfield.grid import dyadic_grid
from roughfield.lift import ito_lift, stratonovich_lift
from roughfield.noise import CoupledBrownian, replica_rng, sample_brownian


class TestAlgebraicDefects(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_random_cases_are_exact(self):
        worst = 0.0
        for case in range(100):
            rng = replica_rng(15, case, 2)
            grid = dyadic_grid(4 + case % 3)
            W = sample_brownian(grid, 2, replica_rng(15, case, 0))
            rX = (ito_lift if case % 2 else stratonovich_lift)(W, 4, replica_rng(15, case, 3))
            record = algebraic_defects(rX, sample_brownian(grid, 2, replica_rng(15, case, 1)), rng)
            worst = max(worst, record["defect"])
        print(f"  worst defect over 100 cases {worst:.2e}")
        self.assertLess(worst, 1e-10)

    def test_record_keys(self):
        grid = dyadic_grid(4)
        rX = ito_lift(sample_brownian(grid, 1, 1), 2, 2)
        record = algebraic_defects(rX, sample_brownian(grid, 1, 3), np.random.default_rng(0))
        self.assertEqual(set(record), {"mesh", "defect", *ALGEBRAIC_KEYS})
        self.assertEqual(record["defect"], max(record[k] for k in ALGEBRAIC_KEYS))

    def test_martingale_shape_checked(self):
        grid = dyadic_grid(3)
        rX = ito_lift(sample_brownian(grid, 2, 1), 2, 2)
        with self.assertRaises(ShapeError):
            algebraic_defects(rX, sample_brownian(grid, 1, 3), np.random.default_rng(0))

    def test_exactness_report(self):
        records = [[{"mesh": h, "defect": 1e-15, **{k: 1e-15 for k in ALGEBRAIC_KEYS}} for _ in range(3)]
                   for h in (0.25, 0.125)]
        report = exactness_report(records)
        self.assertTrue(report.passed)
        self.assertTrue(report.exact)
        records[1][2] = dict(records[1][2], defect=1e-8)
        failed = exactness_report(records)
        self.assertFalse(failed.passed)
        self.assertAlmostEqual(failed.extras["worst"], 1e-8)


class TestBracketStatistics(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def _records(self, replicas, levels=(3, 4)):
        per_replica = []
        for r in range(replicas):
            source = CoupledBrownian(2, max(levels), replica_rng(16, r), refine=16, coarse_level=min(levels))
            per_replica.append([bracket_record(source.lift(lv, "ito"), source.lift(lv, "stratonovich"))
                                for lv in levels])
        return [list(recs) for recs in zip(*per_replica)]

    def test_ito_mean_is_time(self):
        report = bracket_report(self._records(300), horizon=1.0)
        print(f"  mean Ito brackets {report.extras['ito_mean'][-1]}")
        self.assertTrue(report.passed)
        np.testing.assert_allclose(report.extras["ito_mean"][-1], np.eye(2), atol=0.05)
        self.assertLess(max(report.extras["stratonovich_max"]), 1e-12)

    def test_tight_tolerance_fails(self):
        self.assertFalse(bracket_report(self._records(20), horizon=1.0, tolerance=1e-6).passed)

    def test_lift_kinds_checked(self):
        W = sample_brownian(dyadic_grid(3), 1, 0)
        with self.assertRaises(ValueError):
            bracket_record(stratonovich_lift(W, 2, 1), ito_lift(W, 2, 1))
        with self.assertRaises(InsufficientDataError):
            bracket_report([[bracket_record(ito_lift(W, 2, 1), stratonovich_lift(W, 2, 1))]], 1.0)


class TestLinearOracles(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.levels = (5, 6, 7, 8)
        self.sources = [CoupledBrownian(1, 8, replica_rng(17, r), refine=4, coarse_level=5) for r in range(30)]

    def test_geometric_brownian_motion_order(self):
        errors = [np.median([geometric_error(s.lift(lv, "stratonovich"))["defect"] for s in self.sources])
                  for lv in self.levels]
        h = 2.0 ** -np.array(self.levels)
        order = np.polyfit(np.log(h), np.log(errors), 1)[0]
        print(f"  median strong errors {[f'{e:.2e}' for e in errors]}, order {order:.3f}")
        self.assertGreater(order, 0.8)

    def test_geometric_error_with_drift(self):
        rW = self.sources[0].lift(8, "stratonovich")
        record = geometric_error(rW, x0=2.0, drift=-0.5, volatility=0.4)
        expected = 2.0 * np.exp(-0.5 + 0.4 * rW.base.values[-1, 0])
        self.assertAlmostEqual(record["exact"], expected)
        self.assertLess(record["defect"], 1e-2)
        with self.assertRaises(ValueError):
            geometric_error(ito_lift(rW.base, 2, 1))

    def test_jacobian_against_expm(self):
        A = np.array([[-0.5, 1.0], [-1.0, -0.5]])
        rW = self.sources[0].lift(8, "stratonovich")
        record = linear_jacobian_error(rW, A, [[0.3], [0.1]])
        print(f"  Jacobian error at level 8 {record['defect']:.2e}")
        self.assertLess(record["defect"], 2e-3)
        coarse = linear_jacobian_error(self.sources[0].lift(5, "stratonovich"), A, [[0.3], [0.1]])
        self.assertLess(record["defect"], 0.2 * coarse["defect"])
        # the scalar case without noise is (1 + a dt)^n
        scalar = linear_jacobian_error(rW, [[-1.0]], [[0.0]])
        self.assertAlmostEqual(scalar["defect"], abs((1.0 - 2.0 ** -8) ** 256 - float(expm([[-1.0]])[0, 0])),
                               delta=1e-12)

    def test_noise_shape_checked(self):
        with self.assertRaises(ShapeError):
            linear_jacobian_error(self.sources[0].lift(5, "stratonovich"), np.eye(2), [[0.3, 0.1]])

    def test_reports(self):
        drivers = [[s.lift(lv, "stratonovich") for s in self.sources[:10]] for lv in self.levels]
        gbm, jacobian = verify_rde_oracle(drivers, min_order=0.7, tolerance=2e-3)
        print(f"  {gbm.summary()}; {jacobian.summary()}")
        self.assertTrue(gbm.passed)
        self.assertTrue(jacobian.passed)


if __name__ == '__main__':
    unittest.main()
