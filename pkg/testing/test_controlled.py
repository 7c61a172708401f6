import sys
import unittest
from pathlib import Path

import numpy as np

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.controlled import (ControlledPath, Jet, JetField, StronglyControlledPath, compose_field_path,
                                   compose_fields, compose_jets, constant_field, fd_jet_check, field_criterion,
                                   identity_field, path_as_field, remainder_2, remainder_3, reverse_orientation,
                                   static_field)
from roughfield.errors import ShapeError
from roughfield.flows import forward_flow_jet
from roughfield.grid import GridPath, dyadic_grid
from roughfield.library import driftless, linear, ridge
from roughfield.lift import ito_lift, stratonovich_lift
from roughfield.noise import sample_brownian


def _assert_jets_close(test, A: Jet, B: Jet, atol=1e-12):
    for name, a, b in zip(Jet._fields, A, B):
        test.assertEqual(a.shape, b.shape, name)
        np.testing.assert_allclose(a, b, atol=atol, err_msg=name)


class TestComposition(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(4)
        self.W = sample_brownian(self.grid, 1, 3)
        self.rX = stratonovich_lift(self.W, 4, 4)
        self.vf = driftless(ridge("sin", [[0.5]], [[[1.0]]], offset=[[1.0]]), linear([[-0.5]]))
        self.points = np.linspace(-0.8, 0.8, 5)[:, None]
        self.ks = np.array([0, 3, 7, 10, 16])

    def test_identity_is_neutral(self):
        F = forward_flow_jet(self.vf, self.rX, 0)
        I = identity_field(self.grid, 1, 1)
        base = F.evaluate_batch(self.ks, self.points)
        _assert_jets_close(self, compose_fields(F, I).evaluate_batch(self.ks, self.points), base)
        _assert_jets_close(self, compose_fields(I, F).evaluate_batch(self.ks, self.points), base)

    def test_static_chain_rule(self):
        inner = static_field(ridge("sin", [1.0], [[1.0]]), self.grid, 1)
        outer = static_field(ridge("square", [1.0], [[1.0]]), self.grid, 1)
        jet = compose_fields(outer, inner).evaluate_batch(self.ks, self.points)
        x = self.points[:, 0]
        np.testing.assert_allclose(jet.F[:, 0], np.sin(x) ** 2, atol=1e-14)
        np.testing.assert_allclose(jet.dF[:, 0, 0], np.sin(2 * x), atol=1e-14)
        np.testing.assert_allclose(jet.d2F[:, 0, 0, 0], 2 * np.cos(2 * x), atol=1e-14)
        np.testing.assert_allclose(jet.Fp, 0.0)

    def test_bracket_rate_enters_time_slot(self):
        outer = static_field(ridge("square", [1.0], [[1.0]]), self.grid, 1)
        s = 0.7
        inner = Jet(np.array([[0.2]]), np.array([[[s]]]), np.array([[[1.0]]]), np.zeros((1, 1, 1, 1)),
                    np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), np.zeros((1, 1)))
        J2 = outer.evaluate_batch([0], inner.F)
        rate = np.full((1, 1, 1), 2.0)
        plain = compose_jets(J2, inner)
        corrected = compose_jets(J2, inner, rate)
        # 1/2 d2F(F', F') rate = 1/2 * 2 * s^2 * 2
        self.assertAlmostEqual(float(corrected.Fdot[0, 0] - plain.Fdot[0, 0]), 2.0 * s * s)

    def test_dimension_mismatch(self):
        F2 = static_field(ridge("sin", [1.0], [[1.0, 1.0]]), self.grid, 1)
        F1 = static_field(ridge("sin", [1.0], [[1.0]]), self.grid, 1)
        with self.assertRaises(ShapeError):
            compose_fields(F2, F1)

    def test_field_along_path(self):
        Y = GridPath(self.grid, np.cos(self.grid.times))
        scp = StronglyControlledPath(Y, GridPath(self.grid, np.full((17, 1, 1), 0.3)),
                                     GridPath(self.grid, np.full((17, 1, 1, 1), 0.1)),
                                     GridPath(self.grid, np.full((17, 1), -0.2)))
        ident = static_field(linear([[1.0]]), self.grid, 1)
        Z = compose_field_path(ident, scp)
        np.testing.assert_allclose(Z.Y.values, Y.values, atol=1e-14)
        np.testing.assert_allclose(Z.Yp.values, scp.Yp.values, atol=1e-14)
        np.testing.assert_allclose(Z.Ypp.values, scp.Ypp.values, atol=1e-14)
        np.testing.assert_allclose(Z.Ydot.values, scp.Ydot.values, atol=1e-14)
        jet = path_as_field(scp).evaluate(5, [0.0])
        self.assertAlmostEqual(float(jet.F[0]), float(Y[5, 0]))


class TestJetField(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(3)

    def test_component_shapes_checked(self):
        def bad(ks, xs):
            B = xs.shape[0]
            return Jet(np.zeros((B, 1)), np.zeros((B, 2)), np.zeros((B, 1, 1)), np.zeros((B, 1, 1, 1)),
                       np.zeros((B, 1, 1, 1)), np.zeros((B, 1, 1, 1)), np.zeros((B, 1)))

        F = JetField(self.grid, 1, 1, 1, bad, name="bad")
        with self.assertRaises(ShapeError):
            F.evaluate(0, [0.0])

    def test_index_range(self):
        F = constant_field(self.grid, [1.0, 2.0], 1, 1)
        with self.assertRaises(IndexError):
            F.evaluate_batch([9], [[0.0]])
        np.testing.assert_allclose(F.evaluate(8, [0.5]).F, [1.0, 2.0])

    def test_single_evaluations_are_cached(self):
        F = constant_field(self.grid, [1.0], 1, 1)
        first = F.evaluate(2, [0.5])
        self.assertIs(F.evaluate(2, [0.5]), first)
        F.clear_cache()
        self.assertIsNot(F.evaluate(2, [0.5]), first)

    def test_box_validation(self):
        with self.assertRaises(ValueError):
            JetField(self.grid, 1, 1, 1, lambda ks, xs: None, box=(np.array([1.0]), np.array([0.0])))
        with self.assertRaises(ValueError):
            JetField(self.grid, 1, 1, 1, lambda ks, xs: None, resolution=1)

    def test_lattice(self):
        F = identity_field(self.grid, 2, 1)
        pts = F.lattice(3)
        self.assertEqual(pts.shape, (9, 2))
        np.testing.assert_allclose(pts.min(axis=0), [-1.0, -1.0])


class TestRemainders(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(5)
        self.rX = stratonovich_lift(sample_brownian(self.grid, 1, 0), 4, 1)

    def test_affine_path_has_no_remainder(self):
        X = self.rX.base
        cp = ControlledPath(GridPath(self.grid, 2.0 * X.values + 1.0), GridPath(self.grid, np.full((33, 1, 1), 2.0)))
        self.assertLess(remainder_2(cp, self.rX), 1e-12)
        with self.assertRaises(ValueError):
            remainder_2(cp, X)

    def test_third_order_remainder(self):
        X = self.rX.base.values
        t = self.grid.times[:, None]
        # Y = X + X^2/2 + t with Y' = 1 + X, Y'' = 1, Ydot = 1; exact for a geometric lift
        scp = StronglyControlledPath(GridPath(self.grid, X + 0.5 * X ** 2 + t),
                                     GridPath(self.grid, (1.0 + X)[:, :, None]),
                                     GridPath(self.grid, np.ones((33, 1, 1, 1))),
                                     GridPath(self.grid, np.ones((33, 1))))
        self.assertLess(remainder_3(scp, self.rX), 1e-10)
        self.assertLess(remainder_3(reverse_orientation(reverse_orientation(scp)), self.rX), 1e-10)

    def test_reverse_orientation_needs_geometric(self):
        scp = StronglyControlledPath.zeros(self.grid, 1, 1)
        with self.assertRaises(ValueError):
            reverse_orientation(scp, geometric=False)


class TestCriterion(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(4)

    def test_static_field_has_no_temporal_part(self):
        rX = ito_lift(sample_brownian(self.grid, 1, 2), 4, 3)
        F = static_field(ridge("sin", [1.0], [[1.0]]), self.grid, 1)
        norms = field_criterion(F, rX, resolution=5, time_samples=3, mixed_resolution=3)
        print(f"  x_part {norms.x_part:.4f}, t_part {norms.t_part:.2e}, mixed {norms.mixed:.4f}")
        self.assertLess(norms.t_part, 1e-12)
        self.assertGreater(norms.x_part, 0.0)
        self.assertTrue(np.isfinite(norms.mixed))
        self.assertIn("F", norms.to_dict()["table"]["x"])

    def test_fd_check_of_cubic(self):
        F = static_field(ridge("cube", [1.0], [[1.0]]), self.grid, 1)
        report = fd_jet_check(F, h=1e-4)
        print(f"  fd deviations: {report.to_dict()}")
        # central differences of a cubic are off by h^2
        self.assertAlmostEqual(report.dF, 1e-8, delta=1e-9)
        self.assertLess(report.d2F, 1e-9)
        self.assertEqual(report.symmetry, 0.0)

    def test_fd_check_of_flow_jet(self):
        rX = stratonovich_lift(sample_brownian(self.grid, 1, 5), 4, 6)
        vf = driftless(ridge("sin", [[0.5]], [[[1.0]]], offset=[[1.0]]), linear([[-0.5]]))
        report = fd_jet_check(forward_flow_jet(vf, rX, 0), h=1e-4, rX=rX)
        print(f"  worst fd deviation of the flow jet {report.worst():.3e}")
        self.assertLess(max(report.dF, report.d2F, report.dFp), 1e-6)


if __name__ == '__main__':
    unittest.main()
