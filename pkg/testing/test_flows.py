import sys
import pickle
import unittest
from pathlib import Path

import numpy as np

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.errors import DivergenceError, ShapeError
from roughfield.flows import (backward_flow_jet, flow_table, flow_to, forward_flow_jet, rde_hessian, rde_jacobian,
                              rde_solve, solution_jet)
from roughfield.grid import dyadic_grid
from roughfield.library import VectorFieldPair, constant, driftless, linear, ridge, zero
from roughfield.lift import ito_lift, stratonovich_lift
from roughfield.noise import sample_brownian


class TestScheme(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(5)
        self.W = sample_brownian(self.grid, 1, 8)
        self.rZ = stratonovich_lift(self.W, 4, 9)
        self.vf = driftless(ridge("sin", [[0.5]], [[[1.0]]], offset=[[1.0]]), linear([[-1.0]]))

    def test_linear_drift_is_euler(self):
        vf = VectorFieldPair(linear([[-2.0]]), zero((1, 1), 1))
        Y = rde_solve(vf, self.rZ, 0, [1.0])
        expected = (1.0 - 2.0 * self.grid.dt) ** np.arange(self.grid.n_steps + 1)
        np.testing.assert_allclose(Y.values[:, 0], expected, rtol=1e-13)

    def test_additive_noise(self):
        vf = VectorFieldPair(zero((1,), 1), constant([[0.7]], 1))
        Y = rde_solve(vf, self.rZ, 0, [0.2])
        np.testing.assert_allclose(Y.values[:, 0], 0.2 + 0.7 * self.W.values[:, 0], atol=1e-14)

    def test_start_node(self):
        Y = rde_solve(self.vf, self.rZ, 10, [0.3])
        np.testing.assert_allclose(Y.values[:11, 0], 0.3)
        self.assertNotAlmostEqual(float(Y[20, 0]), 0.3)

    def test_jacobian_matches_differences(self):
        h = 1e-6
        A = rde_jacobian(self.vf, self.rZ, 0, [0.4]).values[:, 0, 0]
        plus = rde_solve(self.vf, self.rZ, 0, [0.4 + h]).values[:, 0]
        minus = rde_solve(self.vf, self.rZ, 0, [0.4 - h]).values[:, 0]
        np.testing.assert_allclose(A, (plus - minus) / (2 * h), atol=1e-7)

    def test_hessian_matches_differences(self):
        h = 1e-5
        H = rde_hessian(self.vf, self.rZ, 0, [0.4]).values[:, 0, 0, 0]
        plus = rde_jacobian(self.vf, self.rZ, 0, [0.4 + h]).values[:, 0, 0]
        minus = rde_jacobian(self.vf, self.rZ, 0, [0.4 - h]).values[:, 0, 0]
        np.testing.assert_allclose(H, (plus - minus) / (2 * h), atol=1e-6)

    def test_staggered_starts(self):
        starts = np.array([0, 5, 12])
        points = np.array([[0.1], [0.2], [0.3]])
        states, _, _ = flow_to(self.vf, self.rZ, starts, points, 20)
        for b in range(3):
            single = rde_solve(self.vf, self.rZ, int(starts[b]), points[b]).values[20]
            np.testing.assert_allclose(states[b], single, atol=1e-13)
        with self.assertRaises(IndexError):
            flow_to(self.vf, self.rZ, [25], [[0.0]], 20)

    def test_flow_table_stop(self):
        table = flow_table(self.vf, self.rZ, 0, [[0.1], [0.5]], stop=8)
        np.testing.assert_allclose(table.states[8:], np.broadcast_to(table.states[8], (25, 2, 1)))
        with self.assertRaises(ValueError):
            table.jacobian_path(0)

    def test_driver_dimension_checked(self):
        rZ2 = stratonovich_lift(sample_brownian(self.grid, 2, 1), 4, 2)
        with self.assertRaises(ShapeError):
            rde_solve(self.vf, rZ2, 0, [0.0])


class TestDivergence(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_explosion_names_the_node(self):
        grid = dyadic_grid(4)
        rZ = ito_lift(sample_brownian(grid, 1, 0), 2, 1)
        vf = VectorFieldPair(linear([[1000.0]]), zero((1, 1), 1))
        with self.assertRaises(DivergenceError) as ctx:
            rde_solve(vf, rZ, 0, [1.0])
        # (1 + 1000/16)^k passes 1e8 at k = 5
        self.assertEqual(ctx.exception.node, 5)

    def test_error_survives_pickling(self):
        err = DivergenceError("flow state left the admissible range at node 3", node=3).with_replica(7)
        again = pickle.loads(pickle.dumps(err))
        self.assertEqual((again.node, again.replica), (3, 7))
        self.assertIn("replica 7", str(again))


class TestFlowJets(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(5)
        self.rZ = stratonovich_lift(sample_brownian(self.grid, 1, 14), 4, 15)
        self.vf = driftless(ridge("sin", [[0.5]], [[[1.0]]], offset=[[1.0]]), linear([[-1.0]]))
        self.g = ridge("tanh", [1.0], [[1.0]])

    def test_backward_jet_at_terminal_node(self):
        F = backward_flow_jet(self.vf, self.rZ, self.g)
        pts = np.array([[-0.5], [0.0], [0.7]])
        jet = F.evaluate_batch(np.full(3, self.grid.n_steps), pts)
        np.testing.assert_allclose(jet.F, self.g.value(pts), atol=1e-15)
        np.testing.assert_allclose(jet.dF, self.g.jacobian(pts), atol=1e-15)
        np.testing.assert_allclose(jet.d2F, self.g.hessian(pts), atol=1e-15)

    def test_backward_jet_is_constant_along_solutions(self):
        F = backward_flow_jet(self.vf, self.rZ, self.g)
        Y = rde_solve(self.vf, self.rZ, 0, [0.25])
        values = F.along(Y).F[:, 0]
        spread = float(np.max(np.abs(values - values[0])))
        print(f"  spread of F_t(Y_t) along the solution: {spread:.2e}")
        self.assertLess(spread, 1e-12)

    def test_backward_gubinelli_derivative(self):
        F = backward_flow_jet(self.vf, self.rZ, self.g)
        x = np.array([[0.3]])
        jet = F.evaluate_batch([4], x)
        sigma = self.vf.sigma.value(x)
        np.testing.assert_allclose(jet.Fp, -np.einsum("nuw,nwa->nua", jet.dF, sigma), atol=1e-15)

    def test_terminal_out_of_range(self):
        F = backward_flow_jet(self.vf, self.rZ, self.g, terminal=10)
        with self.assertRaises(IndexError):
            F.evaluate(12, [0.0])

    def test_rate_correction_for_ito_lifts(self):
        rW = ito_lift(self.rZ.base, 4, 3)
        F = backward_flow_jet(self.vf, rW, self.g)
        G = backward_flow_jet(self.vf, self.rZ, self.g)
        x = np.array([[0.1]])
        jet = F.evaluate_batch([0], x)
        # Stratonovich flow jets have no bracket term in the time slot
        geometric = G.evaluate_batch([0], x)
        mu = self.vf.mu.value(x)
        np.testing.assert_allclose(geometric.Fdot, -np.einsum("nuw,nw->nu", geometric.dF, mu), atol=1e-14)
        self.assertNotAlmostEqual(float(jet.Fdot[0, 0]), float(-jet.dF[0, 0, 0] * mu[0, 0]))

    def test_forward_jet_matches_jacobian(self):
        F = forward_flow_jet(self.vf, self.rZ, 6)
        A = rde_jacobian(self.vf, self.rZ, 6, [0.2]).values
        jet = F.evaluate_batch(np.arange(6, 33), np.full((27, 1), 0.2))
        np.testing.assert_allclose(jet.dF, A[6:], atol=1e-14)
        with self.assertRaises(IndexError):
            F.evaluate(3, [0.2])

    def test_solution_jet(self):
        scp = solution_jet(self.vf, self.rZ, 4, [0.5])
        Y = scp.Y.values
        np.testing.assert_allclose(scp.Yp.values[4:], self.vf.sigma.value(Y[4:]), atol=1e-15)
        np.testing.assert_allclose(scp.Yp.values[:4], 0.0)
        np.testing.assert_allclose(scp.Ydot.values[4:], self.vf.mu.value(Y[4:]), atol=1e-15)


if __name__ == '__main__':
    unittest.main()
