# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

import sys
from typing import TextIO

from rkoshard import SimStatus
from rkoshard.compute import Model
from rkoshard.config import ExperimentConfig
from rkoshard.optim import Optimizer
from rkoshard.replication import Replicator, ReplicatorConfig


class ModelFactory:
    @classmethod
    def create(cls, config: ExperimentConfig) -> Model:
        from rkoshard.compute import MlpModel, ModelKind, QuadraticModel

        pad_multiple: int = config.topology.shard_count if config.model.pad_to_shards else 1
        if config.model.kind is ModelKind.QUADRATIC:
            return QuadraticModel(config.model.dim, pad_multiple=pad_multiple)
        return MlpModel(
            list(config.model.layer_dims),
            activation=config.model.activation,
            loss=config.model.loss,
            pad_multiple=pad_multiple,
        )


class ReplicatorFactory:
    @classmethod
    def create(cls, config: ReplicatorConfig) -> Replicator:
        from rkoshard.replication import (
            DemoReplicator,
            DilocoReplicator,
            FullReplicator,
            RandomReplicator,
            Scheme,
            StridingReplicator,
        )

        replicators: dict[Scheme, type[Replicator]] = {
            Scheme.DEMO: DemoReplicator,
            Scheme.RANDOM: RandomReplicator,
            Scheme.STRIDING: StridingReplicator,
            Scheme.DILOCO: DilocoReplicator,
            Scheme.FULL: FullReplicator,
        }
        return replicators[config.scheme](config)


class OptimizerFactory:
    @classmethod
    def create(cls, config: ExperimentConfig) -> Optimizer:
        from rkoshard.optim import BaselineAdamW, BaselineSgd, DecoupledAdamW, DemoSgd, OptimizerKind

        optimizers: dict[OptimizerKind, type[Optimizer]] = {
            OptimizerKind.DEMO_SGD: DemoSgd,
            OptimizerKind.DECOUPLED_ADAMW: DecoupledAdamW,
            OptimizerKind.BASELINE_ADAMW: BaselineAdamW,
            OptimizerKind.BASELINE_SGD: BaselineSgd,
        }
        replicator: Replicator = ReplicatorFactory.create(config.effective_replicator)
        return optimizers[config.optimizer.kind](config.optimizer, replicator)


class StatusFactory:
    @classmethod
    def create(cls, quiet: bool = False, show_detail: bool = False, stream: TextIO | None = None) -> SimStatus:
        from rkoshard import NullStatus
        from rkoshard.writer import StatusWriter

        if quiet:
            return NullStatus()
        return StatusWriter(stream=stream or sys.stdout, show_detail=show_detail)
