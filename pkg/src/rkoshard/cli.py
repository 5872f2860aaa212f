# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any, Final

from rkoshard import ConfigError, SimStatus
from rkoshard.coerce import as_enum
from rkoshard.config import ExperimentConfig, flatten_keys, load_config, read_yaml_mapping
from rkoshard.factories import StatusFactory


class Cli:

    RUN_COMMAND: Final[str] = "run"
    SWEEP_COMMAND: Final[str] = "sweep"
    VERIFY_COMMAND: Final[str] = "verify"

    EXIT_OK: Final[int] = 0
    EXIT_FAILURE: Final[int] = 1
    EXIT_CONFIG: Final[int] = 2

    def main(self, argv: list[str]) -> int:  # pragma: no cover
        try:
            args = self.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
        try:
            if args.command == self.RUN_COMMAND:
                return self.run(args)
            if args.command == self.SWEEP_COMMAND:
                return self.sweep(args)
            if args.command == self.VERIFY_COMMAND:
                return self.verify(args)
            return self.error(f"Unknown command: {args.command}", self.EXIT_CONFIG)
        except ConfigError as e:
            return self.error(e, self.EXIT_CONFIG)
        except Exception as e:
            return self.error(e)

    def error(self, error: str | Exception, code: int = EXIT_FAILURE) -> int:
        if isinstance(error, ConfigError) and len(error.violations) > 1:
            print("Invalid configuration:", file=sys.stderr)
            for violation in error.violations:
                print(f" - {violation}", file=sys.stderr)
        else:
            print(error, file=sys.stderr)
        return code

    def success(self) -> int:
        return self.EXIT_OK

    def get_parser(self) -> ArgumentParser:
        parser: ArgumentParser = ArgumentParser(
            prog="rkoshard", description="Simulate hybrid-sharded training with decoupled momentum replication."
        )
        subparsers = parser.add_subparsers(dest="command", required=True)

        # run
        run_parser = subparsers.add_parser(self.RUN_COMMAND, help="Train one experiment.")
        self._add_experiment_args(run_parser)

        # sweep
        sweep_parser = subparsers.add_parser(self.SWEEP_COMMAND, help="Train one experiment per axis value.")
        self._add_experiment_args(sweep_parser)
        sweep_parser.add_argument(
            "--axis",
            required=True,
            help="compression, chunk_size, top_k, sign, dtype, scheme or bandwidth.",
        )
        sweep_parser.add_argument(
            "--values", required=True, action="append", help="Comma-separated axis values (repeatable)."
        )

        # verify
        verify_parser = subparsers.add_parser(self.VERIFY_COMMAND, help="Run the built-in oracle suite.")
        self._add_status_args(verify_parser)

        return parser

    def _add_experiment_args(self, parser: ArgumentParser) -> None:
        parser.add_argument("config", type=str, help="Path to the experiment config (YAML).")
        parser.add_argument("--out", type=str, help="Output directory (output.out_dir).")
        parser.add_argument("--seed", type=str, help="Experiment seed (seed).")
        parser.add_argument("--steps", type=str, help="Number of steps (steps).")
        parser.add_argument("--value", "-v", action="append", dest="values_", default=[], metavar="KEY=VALUE")
        parser.add_argument("--values-from", type=str, help="Path to a YAML file of config overrides.")
        self._add_status_args(parser)

    def _add_status_args(self, parser: ArgumentParser) -> None:
        parser.add_argument("--quiet", "-q", action="store_true", help="Suppress status output.")
        parser.add_argument("--detail", action="store_true", help="Show detail lines.")

    def parse_args(self, argv: list[str]) -> Namespace:
        parser = self.get_parser()
        return parser.parse_args(argv)

    def get_status(self, args: Namespace) -> SimStatus:
        return StatusFactory.create(quiet=args.quiet, show_detail=args.detail)

    def read_overrides(self, args: Namespace) -> dict[str, Any]:
        overrides: dict[str, Any] = {}
        if args.values_from:
            overrides.update(flatten_keys(read_yaml_mapping(Path(args.values_from))))
        # CLI values win
        for pair in args.values_:
            if "=" not in pair:
                raise ConfigError(f"Expected KEY=VALUE, got {pair!r}")
            key, value = pair.split("=", 1)
            overrides[key.strip()] = value
        for key, value in (("output.out_dir", args.out), ("seed", args.seed), ("steps", args.steps)):
            if value is not None:
                overrides[key] = value
        return overrides

    def read_config(self, args: Namespace) -> ExperimentConfig:
        return load_config(Path(args.config), self.read_overrides(args))

    def run(self, args: Namespace) -> int:
        from rkoshard.trainer import train

        config: ExperimentConfig = self.read_config(args)
        status: SimStatus = self.get_status(args)
        with status.section(f"run {args.config}"):
            result = train(config, status=status)
        status.info(f"Wrote {config.output.out_dir / config.output.metrics_file}")
        return self.success() if result.ok else self.EXIT_FAILURE

    def sweep(self, args: Namespace) -> int:
        from rkoshard.sweep import SweepAxis, sweep

        config: ExperimentConfig = self.read_config(args)
        try:
            axis: SweepAxis = as_enum(args.axis, SweepAxis)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        values: list[str] = [value.strip() for group in args.values for value in group.split(",") if value.strip()]
        status: SimStatus = self.get_status(args)
        with status.section(f"sweep {axis.value}"):
            points = sweep(config, axis, values, status=status)
        return self.success() if all(point.status == "ok" for point in points) else self.EXIT_FAILURE

    def verify(self, args: Namespace) -> int:
        from rkoshard.verify import verify

        report = verify(status=self.get_status(args))
        if report.ok:
            return self.success()
        for name, message in report.failed:
            self.error(f"FAILED {name}: {message}")
        return self.EXIT_FAILURE


def main() -> int:  # pragma: no cover
    return Cli().main(sys.argv[1:])
