import sys
import io
import importlib
import pkgutil
import json
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

# Add src to path
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from roughfield.cli import main
from roughfield.scenarios import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, SCENARIOS

JSON_DIR = Path(__file__).parent.parent / "jsons"


def _run(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_list_scenarios(self):
        code, out = _run(["list-scenarios"])
        self.assertEqual(code, EXIT_OK)
        for name in SCENARIOS:
            self.assertIn(f"{name}:", out)

    def test_fit_rate(self):
        table = self.dir / "rates.csv"
        table.write_text("mesh,median\n0.25,0.0625\n0.125,0.015625\n0.0625,0.00390625\n")
        code, out = _run(["fit-rate", str(table)])
        self.assertEqual(code, EXIT_OK)
        self.assertAlmostEqual(json.loads(out)["slope"], 2.0, delta=1e-10)

    def test_fit_rate_needs_points(self):
        table = self.dir / "rates.csv"
        table.write_text("mesh,median\n0.25,0.0625\n0.125,0.015625\n")
        self.assertEqual(_run(["fit-rate", str(table)])[0], EXIT_FAIL)
        self.assertEqual(_run(["fit-rate", str(self.dir / "missing.csv")])[0], EXIT_CONFIG)

    def test_kolmogorov_example(self):
        code, out = _run(["kolmogorov", "--level", "1", "--q", "2", "--example", "brownian",
                          "--count", "100", "--grid-level", "6"])
        self.assertEqual(code, EXIT_OK)
        result = json.loads(out)
        self.assertEqual(result["samples"], 100)
        self.assertAlmostEqual(result["slope"], 0.5, delta=0.1)

    def test_kolmogorov_remainder_example(self):
        code, out = _run(["kolmogorov", "--level", "3", "--q", "6", "--example", "remainder",
                          "--count", "100", "--grid-level", "8"])
        self.assertEqual(code, EXIT_OK)
        result = json.loads(out)
        print(f"  remainder exponent {result['slope']:.3f}")
        self.assertEqual(result["n_used"], 7)
        self.assertAlmostEqual(result["slope"], 1.5, delta=0.3)

    def test_kolmogorov_without_samples(self):
        self.assertEqual(_run(["kolmogorov", "--level", "1", "--q", "2"])[0], EXIT_CONFIG)

    def test_run(self):
        out_dir = self.dir / "reports"
        code, out = _run(["--log-level", "ERROR", "run", str(JSON_DIR / "01_transport_trivial.json"),
                          "--out", str(out_dir), "--seed", "7"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("rough_transport", out)
        payload = json.loads((out_dir / "rough_transport.json").read_text())
        self.assertEqual(payload["config"]["seed"], 7)


class TestModuleDocs(unittest.TestCase):
    def setUp(self):
        print(f"\nRunning test: {self._testMethodName}")

    def test_top_level_modules_have_docstrings(self):
        import roughfield
        names = [m.name for m in pkgutil.iter_modules(roughfield.__path__) if not m.ispkg]
        self.assertIn("reports", names)
        for name in names:
            module = importlib.import_module(f"roughfield.{name}")
            self.assertTrue(module.__doc__ and module.__doc__.strip(), name)


if __name__ == '__main__':
    unittest.main()
