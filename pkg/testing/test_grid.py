import sys
import unittest
import tempfile
import warnings
import json
from pathlib import Path

import numpy as np

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.errors import GridMismatchError, ShapeError
from roughfield.grid import (GridPath, TimeGrid, TwoParamGrid, anisotropic_distance, check_same_grid,
                             dyadic_grid, holder_seminorm, increment, second_delta, two_param_seminorm)


class TestTimeGrid(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_nodes_and_step(self):
        grid = TimeGrid(T=2.0, n_steps=8)
        self.assertAlmostEqual(grid.dt, 0.25)
        self.assertEqual(len(grid.times), 9)
        self.assertEqual(grid.times[0], 0.0)
        self.assertEqual(grid.times[-1], 2.0)

    def test_rejects_degenerate_grids(self):
        with self.assertRaises(ValueError):
            TimeGrid(T=1.0, n_steps=1)
        with self.assertRaises(ValueError):
            TimeGrid(T=0.0, n_steps=4)

    def test_refine_and_coarsen(self):
        grid = dyadic_grid(3)
        self.assertEqual(grid.refine(4).n_steps, 32)
        self.assertEqual(grid.coarsen(2).n_steps, 4)
        with self.assertRaises(ValueError):
            grid.coarsen(3)

    def test_dict_round_trip(self):
        grid = TimeGrid(T=1.5, n_steps=6, t0=0.5)
        self.assertEqual(TimeGrid.from_dict(grid.to_dict()), grid)
        with self.assertRaises(ValueError):
            TimeGrid.from_dict({"T": 1.0})

    def test_index_out_of_range(self):
        grid = dyadic_grid(2)
        with self.assertRaises(IndexError):
            grid.check_index(5)


class TestGridPath(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.grid = dyadic_grid(3)
        self.path = GridPath(self.grid, self.grid.times ** 2)

    def test_scalar_values_become_vectors(self):
        self.assertEqual(self.path.shape, (1,))
        self.assertEqual(len(self.path), 9)

    def test_values_are_read_only(self):
        with self.assertRaises(ValueError):
            self.path.values[0, 0] = 1.0

    def test_increments(self):
        np.testing.assert_allclose(self.path.increments.sum(axis=0), self.path[-1] - self.path[0])
        np.testing.assert_allclose(increment(self.path, 2, 6), self.path[6] - self.path[2])
        with self.assertRaises(ValueError):
            increment(self.path, 3, 3)

    def test_wrong_length_raises(self):
        with self.assertRaises(ShapeError):
            GridPath(self.grid, np.zeros(4))

    def test_non_finite_raises(self):
        values = np.zeros(9)
        values[4] = np.nan
        with self.assertRaises(ValueError):
            GridPath(self.grid, values)

    def test_stopped_freezes_tail(self):
        stopped = self.path.stopped(4)
        np.testing.assert_allclose(stopped.values[4:], np.broadcast_to(self.path[4], (5, 1)))
        np.testing.assert_allclose(stopped.values[:4], self.path.values[:4])

    def test_arithmetic_needs_same_grid(self):
        other = GridPath(dyadic_grid(2), np.zeros(5))
        with self.assertRaises(GridMismatchError):
            _ = self.path + other
        with self.assertRaises(GridMismatchError):
            check_same_grid(self.path, other)

    def test_from_increments(self):
        inc = np.ones((8, 2))
        p = GridPath.from_increments(self.grid, inc, start=[1.0, -1.0])
        np.testing.assert_allclose(p[-1], [9.0, 7.0])

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "path"
            values = np.arange(27, dtype=float).reshape(9, 3)
            GridPath(self.grid, values).save(stem)
            loaded = GridPath.load(stem)
            self.assertEqual(loaded.grid, self.grid)
            np.testing.assert_array_equal(loaded.values, values)

    def test_newer_schema_warns(self):
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "path"
            self.path.save(stem)
            header = json.loads(stem.with_suffix(".json").read_text())
            header["version"] = 99
            stem.with_suffix(".json").write_text(json.dumps(header))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                GridPath.load(stem)
            self.assertTrue(any("newer" in str(w.message) for w in caught))


class TestTwoParamGrid(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        rng = np.random.default_rng(7)
        self.grid = dyadic_grid(4)
        self.X = GridPath.from_increments(self.grid, rng.standard_normal((16, 2)) * 0.25)
        self.blocks = rng.standard_normal((16, 2, 2)) * 0.1

    def test_additive_values(self):
        A = TwoParamGrid(self.grid, self.blocks)
        self.assertEqual(A.rule, "additive")
        np.testing.assert_allclose(A.value(3, 11), self.blocks[3:11].sum(axis=0))
        np.testing.assert_allclose(second_delta(A, 2, 7, 13), np.zeros((2, 2)), atol=1e-14)

    def test_chen_rule_reconstruction(self):
        A = TwoParamGrid(self.grid, self.blocks, self.X, self.X)
        X = self.X.values
        expected = np.multiply.outer(X[7] - X[2], X[13] - X[7])
        np.testing.assert_allclose(second_delta(A, 2, 7, 13), expected, atol=1e-12)
        # consecutive pairs return the stored blocks
        np.testing.assert_allclose(A.value(5, 6), self.blocks[5])

    def test_vectorized_views_match_pairs(self):
        A = TwoParamGrid(self.grid, self.blocks, self.X, self.X)
        gaps = A.gap_values(3)
        np.testing.assert_allclose(gaps[4], A.value(4, 7), atol=1e-12)
        row = A.values_from(2)
        np.testing.assert_allclose(row[9], A.value(2, 11), atol=1e-12)

    def test_coarsen_keeps_pair_values(self):
        A = TwoParamGrid(self.grid, self.blocks, self.X, self.X)
        C = A.coarsen(4)
        self.assertEqual(C.grid.n_steps, 4)
        np.testing.assert_allclose(C.value(1, 3), A.value(4, 12), atol=1e-12)

    def test_chen_needs_both_paths(self):
        with self.assertRaises(ValueError):
            TwoParamGrid(self.grid, self.blocks, self.X, None)

    def test_block_shape_checked(self):
        with self.assertRaises(ShapeError):
            TwoParamGrid(self.grid, np.zeros((16, 3)), self.X, self.X)

    def test_save_and_load_chen(self):
        A = TwoParamGrid(self.grid, self.blocks, self.X, self.X)
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "area"
            A.save(stem)
            loaded = TwoParamGrid.load(stem)
            self.assertEqual(loaded.rule, "chen")
            np.testing.assert_allclose(loaded.value(1, 14), A.value(1, 14), atol=1e-12)


class TestSeminorms(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_holder_of_linear_path(self):
        grid = dyadic_grid(5)
        p = GridPath(grid, 3.0 * grid.times)
        # |3 (t - s)| / (t - s)^0.5 is largest over the whole interval
        self.assertAlmostEqual(holder_seminorm(p, 0.5), 3.0, delta=1e-12)
        self.assertAlmostEqual(holder_seminorm(p, 1.0), 3.0, delta=1e-12)

    def test_two_param_seminorm_of_additive_object(self):
        grid = dyadic_grid(4)
        A = TwoParamGrid(grid, np.full((16, 1), grid.dt))
        self.assertAlmostEqual(two_param_seminorm(A, 1.0), 1.0, delta=1e-12)
        with self.assertRaises(ValueError):
            two_param_seminorm(A, 1.0, min_gap=0)

    def test_anisotropic_distance(self):
        self.assertAlmostEqual(anisotropic_distance(0.25, 0.1, 0.5), 0.5)
        self.assertAlmostEqual(anisotropic_distance(0.01, 0.3, 0.5), 0.3)
        with self.assertRaises(ValueError):
            anisotropic_distance(-1.0, 0.0, 0.5)


if __name__ == '__main__':
    unittest.main()
