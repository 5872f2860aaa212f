# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Final, Sequence

from rkoshard import ConfigError, NullStatus, SimException, SimStatus
from rkoshard.config import ExperimentConfig, set_nested
from rkoshard.replication import Scheme
from rkoshard.trainer import TrainResult, train

SWEEP_FILE: Final[str] = "sweep.csv"
SWEEP_HEADER: Final[list[str]] = [
    "axis",
    "value",
    "status",
    "final_train_loss",
    "final_val_loss",
    "intra_bytes",
    "inter_bytes",
    "sim_time_s",
    "error",
]


class SweepAxis(Enum):
    COMPRESSION = "compression"
    CHUNK_SIZE = "chunk_size"
    TOP_K = "top_k"
    SIGN = "sign"
    DTYPE = "dtype"
    SCHEME = "scheme"
    BANDWIDTH = "bandwidth"

    @property
    def key(self) -> str:
        """:returns: The dotted config key the axis varies."""
        return _AXIS_KEYS[self]


_AXIS_KEYS: Final[dict[SweepAxis, str]] = {
    SweepAxis.COMPRESSION: "replicator.compression",
    SweepAxis.CHUNK_SIZE: "replicator.chunk_size",
    SweepAxis.TOP_K: "replicator.top_k",
    SweepAxis.SIGN: "replicator.sign",
    SweepAxis.DTYPE: "replicator.transfer_dtype",
    SweepAxis.SCHEME: "replicator.scheme",
    SweepAxis.BANDWIDTH: "link.inter_node_mbps",
}


@dataclass(frozen=True)
class SweepPoint:
    axis: SweepAxis
    value: str
    status: str
    final_train_loss: float | None = None
    final_val_loss: float | None = None
    intra_bytes: int | None = None
    inter_bytes: int | None = None
    sim_time_s: float | None = None
    error: str = ""

    def row(self) -> list[str]:
        def cell(value: Any) -> str:
            if value is None:
                return ""
            return repr(value) if isinstance(value, float) else str(value)

        return [
            self.axis.value,
            self.value,
            self.status,
            cell(self.final_train_loss),
            cell(self.final_val_loss),
            cell(self.intra_bytes),
            cell(self.inter_bytes),
            cell(self.sim_time_s),
            self.error,
        ]


def point_dir_name(axis: SweepAxis, value: str) -> str:
    # "1/16" would otherwise nest a directory.
    return f"{axis.value}={value.strip().replace('/', '_')}"


def point_config(base: ExperimentConfig, axis: SweepAxis, value: str) -> ExperimentConfig:
    """
    :returns: ``base`` with the axis set to ``value``, writing to ``<out>/<axis>=<value>/``. The
        ``full`` scheme point replicates everything, so its compression is reset to 1.
    """
    data: dict[str, Any] = base.to_mapping()
    set_nested(data, axis.key, value)
    if axis is SweepAxis.SCHEME and value.strip().lower() == Scheme.FULL.value:
        set_nested(data, "replicator.compression", "1")
    set_nested(data, "output.out_dir", str(base.output.out_dir / point_dir_name(axis, value)))
    return ExperimentConfig.from_mapping(data)


def run_point(base: ExperimentConfig, axis: SweepAxis, value: str, status: SimStatus) -> SweepPoint:
    """:returns: The outcome of training one sweep value. A failure is reported and recorded, not raised."""
    try:
        result: TrainResult = train(point_config(base, axis, value))
    except SimException as e:
        status.warning(f"{axis.value}={value} failed: {e}")
        return SweepPoint(axis, value, status="failed", error=str(e))
    return SweepPoint(
        axis,
        value,
        status="ok",
        final_train_loss=result.final_train_loss,
        final_val_loss=result.final_val_loss,
        intra_bytes=result.traffic["intra_bytes"],
        inter_bytes=result.traffic["inter_bytes"],
        sim_time_s=result.traffic["sim_time_s"],
    )


def sweep(
    base: ExperimentConfig, axis: SweepAxis, values: Sequence[str], status: SimStatus | None = None
) -> list[SweepPoint]:
    """
    Trains one run per axis value, all with the base seed. A failing point is recorded and the
    sweep moves on. Writes ``sweep.csv`` to the base output directory.
    """
    status = status or NullStatus()
    if axis in (SweepAxis.CHUNK_SIZE, SweepAxis.TOP_K) and base.replicator.scheme is not Scheme.DEMO:
        raise ConfigError(f"Sweep axis {axis.value} needs the demo scheme, got {base.replicator.scheme.value}")
    if not values:
        raise ConfigError("A sweep needs at least one value")

    points: list[SweepPoint] = []
    for value in values:
        with status.item(f"{axis.value}={value}"):
            points.append(run_point(base, axis, value, status))

    write_sweep_csv(base.output.out_dir / SWEEP_FILE, points)
    status.table(SWEEP_HEADER[:-1], [point.row()[:-1] for point in points])
    return points


def write_sweep_csv(path: Path, points: Sequence[SweepPoint]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        writer.writerows(point.row() for point in points)
