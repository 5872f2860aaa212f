# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

import os
import shutil
import tempfile
from argparse import Namespace
from io import StringIO
from pathlib import Path
from typing import Any
from unittest import TestCase
from unittest.mock import patch

import yaml

from rkoshard import ConfigError, DivergenceError, NullStatus
from rkoshard.cli import Cli
from rkoshard.verify import VerifyReport
from rkoshard.writer import StatusWriter

EXPERIMENT: dict[str, Any] = {
    "topology": {"num_nodes": 2, "accels_per_node": 2},
    "model": {"dim": 8},
    "replicator": {"scheme": "demo", "chunk_size": 4, "compression": "1/2"},
    "steps": 3,
}


class TestCli(TestCase):
    def setUp(self) -> None:
        self.sut = Cli()
        self.out_dir: Path = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.out_dir, True)

    def _write_yaml(self, content: Any) -> Path:
        handle, name = tempfile.mkstemp(suffix=".yml")
        os.close(handle)
        path: Path = Path(name)
        path.write_text(yaml.safe_dump(content), encoding="utf-8")
        self.addCleanup(path.unlink)
        return path

    def test_parse_args_defaults(self) -> None:
        args = self.sut.parse_args(["run", "exp.yml"])
        self.assertEqual(("run", "exp.yml"), (args.command, args.config))
        self.assertEqual([], args.values_)
        self.assertIsNone(args.values_from)
        self.assertIsNone(args.out)
        self.assertFalse(args.quiet)
        self.assertFalse(args.detail)

    def test_parse_args_sweep(self) -> None:
        argv = ["sweep", "exp.yml", "--axis", "compression", "--values", "1/16,1/32", "--values", "1/64", "-q"]
        args = self.sut.parse_args(argv)
        self.assertEqual(
            ("sweep", "compression", ["1/16,1/32", "1/64"], True),
            (args.command, args.axis, args.values, args.quiet),
        )

    def test_parse_args_verify(self) -> None:
        args = self.sut.parse_args(["verify", "--detail"])
        self.assertEqual("verify", args.command)
        self.assertTrue(args.detail)

    def test_error_and_success(self) -> None:
        with patch("sys.stderr", new_callable=StringIO):
            self.assertEqual(1, self.sut.error("boom"))
            self.assertEqual(2, self.sut.error("boom", Cli.EXIT_CONFIG))
        self.assertEqual(0, self.sut.success())

    def test_error_lists_violations(self) -> None:
        with patch("sys.stderr", new_callable=StringIO) as stderr:
            self.sut.error(ConfigError(["steps must be >= 1, got 0", "Unknown key: bogus"]))
        self.assertEqual(
            "Invalid configuration:\n - steps must be >= 1, got 0\n - Unknown key: bogus\n", stderr.getvalue()
        )

    def test_get_status(self) -> None:
        self.assertIsInstance(self.sut.get_status(Namespace(quiet=True, detail=False)), NullStatus)
        self.assertIsInstance(self.sut.get_status(Namespace(quiet=False, detail=True)), StatusWriter)

    def test_read_overrides_precedence(self) -> None:
        file_path: Path = self._write_yaml({"replicator": {"compression": "1/8"}, "steps": 2})
        args = Namespace(
            values_from=str(file_path),
            values_=["replicator.compression=1/4", "seed = 9"],
            out="runs/x",
            seed=None,
            steps="4",
        )
        self.assertEqual(
            {"replicator.compression": "1/4", "steps": "4", "seed": " 9", "output.out_dir": "runs/x"},
            self.sut.read_overrides(args),
        )

    def test_read_overrides_bad_pair(self) -> None:
        args = Namespace(values_from=None, values_=["steps"], out=None, seed=None, steps=None)
        with self.assertRaises(ConfigError):
            self.sut.read_overrides(args)

    def test_read_overrides_missing_file(self) -> None:
        args = Namespace(values_from="no_such_file.yml", values_=[], out=None, seed=None, steps=None)
        with self.assertRaises(ConfigError):
            self.sut.read_overrides(args)

    def test_run(self) -> None:
        config: Path = self._write_yaml(EXPERIMENT)
        args = self.sut.parse_args(["run", str(config), "--out", str(self.out_dir), "--steps", "2", "-q"])
        self.assertEqual(0, self.sut.run(args))
        self.assertEqual(3, len((self.out_dir / "metrics.csv").read_text().splitlines()))

    def test_run_writes_status(self) -> None:
        config: Path = self._write_yaml(EXPERIMENT)
        args = self.sut.parse_args(["run", str(config), "--out", str(self.out_dir)])
        with patch("sys.stdout", new_callable=StringIO) as stdout:
            self.sut.run(args)
        self.assertIn(f"✅ Finished **run {config}**", stdout.getvalue())
        self.assertIn("step 2: train", stdout.getvalue())

    def test_run_reports_divergence(self) -> None:
        config: Path = self._write_yaml(EXPERIMENT)
        args = self.sut.parse_args(["run", str(config), "--out", str(self.out_dir)])
        failure: DivergenceError = DivergenceError("Non-finite training loss nan", step=0)
        with patch("rkoshard.trainer.Trainer.train_step", side_effect=failure):
            with patch("sys.stdout", new_callable=StringIO) as stdout:
                with self.assertRaises(DivergenceError):
                    self.sut.run(args)
        self.assertIn(f"❌ Finished **run {config}**", stdout.getvalue())
        self.assertIn("❌ Non-finite training loss nan (step 0)", stdout.getvalue())

    def test_main_config_error(self) -> None:
        config: Path = self._write_yaml({**EXPERIMENT, "bogus": 1})
        with patch("sys.stderr", new_callable=StringIO) as stderr:
            code: int = self.sut.main(["run", str(config), "-q"])
        self.assertEqual(Cli.EXIT_CONFIG, code)
        self.assertIn("Unknown key: bogus", stderr.getvalue())

    def test_sweep(self) -> None:
        config: Path = self._write_yaml(EXPERIMENT)
        argv = ["sweep", str(config), "--out", str(self.out_dir), "--axis", "compression", "--values", "1/4, 1/2", "-q"]
        self.assertEqual(0, self.sut.sweep(self.sut.parse_args(argv)))
        self.assertTrue((self.out_dir / "sweep.csv").is_file())
        self.assertTrue((self.out_dir / "compression=1_4" / "metrics.csv").is_file())

    def test_sweep_with_failed_point(self) -> None:
        config: Path = self._write_yaml(EXPERIMENT)
        argv = ["sweep", str(config), "--out", str(self.out_dir), "--axis", "compression", "--values", "2,1/2", "-q"]
        self.assertEqual(1, self.sut.sweep(self.sut.parse_args(argv)))

    def test_sweep_unknown_axis(self) -> None:
        config: Path = self._write_yaml(EXPERIMENT)
        args = self.sut.parse_args(["sweep", str(config), "--axis", "lr", "--values", "1", "-q"])
        with self.assertRaises(ConfigError):
            self.sut.sweep(args)

    def test_verify(self) -> None:
        args = self.sut.parse_args(["verify", "-q"])
        with patch("rkoshard.verify.verify", return_value=VerifyReport(passed=["a"])):
            self.assertEqual(0, self.sut.verify(args))
        failed: VerifyReport = VerifyReport(failed=[("DCT round trip", "s=1: round-trip error 0.01")])
        with patch("rkoshard.verify.verify", return_value=failed), patch("sys.stderr", new_callable=StringIO) as stderr:
            self.assertEqual(1, self.sut.verify(args))
        self.assertEqual("FAILED DCT round trip: s=1: round-trip error 0.01\n", stderr.getvalue())
