"""
Unit tests for the command-line entry point.

These run ``main`` in-process on small problems and check exit codes and
the files each command writes.
"""
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from main import main
from services.artifact_service import load_model_report, load_trace

SMALL_FIT = [
    "--max-iter", "12", "--zeta", "2", "--patience", "2",
    "--mcmc-samples", "8", "--hampel-window", "2", "--seed", "7",
]


class TestCli(unittest.TestCase):
    """Test cases for main."""

    def setUp(self):
        """Set up test fixtures."""
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _simulate(self, out: str, *extra: str) -> Path:
        code = main([
            "simulate", "--design", "random_slope", "--m", "10", "--n-i", "5", "--p", "6",
            "--tau", "0.8", "--seed", "11", "--out-dir", str(self.dir / out), *extra,
        ])
        self.assertEqual(code, 0)
        return self.dir / out / "simulated.csv"

    def _fit(self, data: Path, out: str, *extra: str) -> int:
        return main(["fit", "--input", str(data), "--out-dir", str(self.dir / out), *SMALL_FIT, *extra])

    def test_simulate_shape(self):
        """Random-slope design with p=50: 500 rows, response, cluster and 50 covariates."""
        code = main([
            "simulate", "--design", "random_slope", "--tau", "0.8", "--p", "50",
            "--out-dir", str(self.dir / "sim"),
        ])
        self.assertEqual(code, 0)
        frame = pd.read_csv(self.dir / "sim" / "simulated.csv")
        self.assertEqual(frame.shape, (500, 52))
        self.assertTrue((self.dir / "sim" / "truth.json").exists())

    def test_simulate_reproducible(self):
        first = self._simulate("a")
        second = self._simulate("b")
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_too_few_covariates(self):
        self.assertEqual(main(["simulate", "--p", "3", "--out-dir", str(self.dir)]), 2)

    def test_invalid_step_length(self):
        self.assertEqual(main(["fit", "--input", "data.csv", "--nu", "0", "--out-dir", str(self.dir)]), 2)

    def test_invalid_replications(self):
        self.assertEqual(main(["bench", "--replications", "0", "--out-dir", str(self.dir)]), 2)

    def test_missing_input(self):
        self.assertEqual(self._fit(self.dir / "absent.csv", "fit"), 3)

    def test_fit_end_to_end(self):
        data = self._simulate("sim")
        self.assertEqual(self._fit(data, "fit"), 0)

        report = load_model_report(self.dir / "fit" / "model.json")
        self.assertEqual((report.n, report.m, report.p), (50, 10, 6))
        self.assertEqual(report.random_effect_ids[0], 0)
        trace, provenance = load_trace(self.dir / "fit" / "trace.csv")
        self.assertEqual(len(trace), 12)
        self.assertEqual(provenance["seed"], "7")
        fitted = pd.read_csv(self.dir / "fit" / "fitted.csv", comment="#")
        self.assertEqual(len(fitted), 50)

    def test_fit_reproducible(self):
        data = self._simulate("sim")
        self.assertEqual(self._fit(data, "first"), 0)
        self.assertEqual(self._fit(data, "second"), 0)
        for name in ("model.json", "trace.csv", "fitted.csv"):
            self.assertEqual(
                (self.dir / "first" / name).read_bytes(),
                (self.dir / "second" / name).read_bytes(),
                name,
            )

    def test_fixed_structure_by_name(self):
        data = self._simulate("sim")
        self.assertEqual(self._fit(data, "fit", "--re-mode", "fixed:x3,x4"), 0)
        report = load_model_report(self.dir / "fit" / "model.json")
        self.assertEqual(report.random_effect_ids, [0, 3, 4])

    def test_fixed_structure_unknown_name(self):
        data = self._simulate("sim")
        self.assertEqual(self._fit(data, "fit", "--re-mode", "fixed:x3,x99"), 2)

    def test_fixed_structure_empty(self):
        with self.assertRaises(SystemExit) as ctx:
            main(["fit", "--input", "data.csv", "--re-mode", "fixed:"])
        self.assertEqual(ctx.exception.code, 2)

    def test_bench(self):
        code = main([
            "bench", "--m", "6", "--n-i", "4", "--p", "4", "--tau", "0.4", "0.8",
            "--replications", "1", "--max-iter", "8", "--zeta", "1", "--patience", "2",
            "--mcmc-samples", "4", "--hampel-window", "2", "--out-dir", str(self.dir / "bench"),
        ])
        self.assertEqual(code, 0)
        summary = pd.read_csv(self.dir / "bench" / "bench_summary.csv")
        self.assertEqual(summary["tau"].tolist(), [0.4, 0.8])
        self.assertTrue((self.dir / "bench" / "bench_config.json").exists())


if __name__ == "__main__":
    unittest.main()
