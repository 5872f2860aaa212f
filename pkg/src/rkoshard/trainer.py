# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Final

import numpy as np

from rkoshard import DivergenceError, Matrix, NullStatus, SimStatus, Vector
from rkoshard.cluster import StepResult, VirtualCluster
from rkoshard.compute import Batch, LossKind, MlpModel, Model
from rkoshard.config import ExperimentConfig
from rkoshard.data import INIT_STREAM, Dataset, make_dataset, seeded_rng, step_batches
from rkoshard.factories import ModelFactory, OptimizerFactory

METRICS_HEADER: Final[list[str]] = ["step", "train_loss", "val_loss", "intra_bytes", "inter_bytes", "sim_time_s"]


def learning_rate(base: float, step: int, warmup_steps: int) -> float:
    """Constant ``base`` after a linear warm-up over the first ``warmup_steps`` steps."""
    if warmup_steps <= 0:
        return base
    return base * min(1.0, (step + 1) / warmup_steps)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    train_loss: float
    val_loss: float | None
    intra_bytes: int
    inter_bytes: int
    sim_time_s: float

    def row(self) -> list[str]:
        return [
            str(self.step),
            repr(self.train_loss),
            "" if self.val_loss is None else repr(self.val_loss),
            str(self.intra_bytes),
            str(self.inter_bytes),
            repr(self.sim_time_s),
        ]


@dataclass
class TrainResult:
    metrics: list[StepMetrics] = field(default_factory=list)
    final_train_loss: float | None = None
    final_val_loss: float | None = None
    traffic: dict[str, Any] = field(default_factory=dict)
    final_val_error: float | None = None
    error: str | None = None
    diverged: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None


class Trainer:
    """Builds the virtual cluster for an experiment and runs its training loop."""

    def __init__(self, config: ExperimentConfig, status: SimStatus | None = None) -> None:
        self.config: Final[ExperimentConfig] = config
        self.status: Final[SimStatus] = status or NullStatus()
        self.model: Final[Model] = ModelFactory.create(config)
        self.dataset: Final[Dataset] = make_dataset(config.data, config.seed)
        init_params: Vector = self.model.init_params(seeded_rng(config.seed, INIT_STREAM))
        self.cluster: Final[VirtualCluster] = VirtualCluster(
            topology=config.topology,
            model=self.model,
            optimizer=OptimizerFactory.create(config),
            link=config.link.link_model(),
            init_params=init_params,
        )

    def evaluate(self) -> float:
        """:returns: The loss of node 0's parameters on the whole validation split."""
        return self.model.forward_loss(self.cluster.params(), self.dataset.val)

    def classification_error(self) -> float | None:
        """
        :returns: The fraction of the validation split node 0 misclassifies, or None for models
            that are not classifiers.
        """
        if not isinstance(self.model, MlpModel) or self.model.loss is not LossKind.CROSS_ENTROPY:
            return None
        logits: Matrix = self.model.predict(self.cluster.params(), self.dataset.val.inputs)
        return float(np.mean(np.argmax(logits, axis=1) != self.dataset.val.targets))

    def run(self) -> TrainResult:
        """
        Runs every step and writes the metric files. On divergence the metrics recorded so far
        are written before the error propagates to the caller, which reports it.
        """
        config: ExperimentConfig = self.config
        result: TrainResult = TrainResult()
        self.status.detail(
            f"{config.topology.num_nodes} node(s) × {config.topology.accels_per_node} accelerator(s), "
            f"{config.topology.mode.value}, {self.model.param_count} parameters, "
            f"scheme {config.effective_replicator.scheme.value}, optimizer {config.optimizer.kind.value}"
        )
        try:
            for step in range(config.steps):
                result.metrics.append(self.train_step(step))
        except Exception as e:
            result.error = str(e)
            result.diverged = isinstance(e, DivergenceError)
            raise
        finally:
            self._finish(result)
        return result

    def train_step(self, step: int) -> StepMetrics:
        """Runs one collective schedule, evaluating on eval steps and the last step."""
        config: ExperimentConfig = self.config
        lr: float = learning_rate(config.optimizer.learning_rate, step, config.warmup_steps)
        batches: list[Batch] = step_batches(
            self.dataset.train, config.seed, step, config.topology.world_size, config.batch_size
        )
        outcome: StepResult = self.cluster.run_collective_schedule(step, batches, lr)

        val_loss: float | None = None
        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            val_loss = self.evaluate()
            if not math.isfinite(val_loss):
                raise DivergenceError(f"Non-finite validation loss {val_loss}", step=step)
            self.status.info(
                f"step {step}: train {outcome.train_loss:.6g}, val {val_loss:.6g}, "
                f"inter-node {outcome.traffic.inter_bytes} B/step, {outcome.traffic.sim_time_s:.4f} s simulated"
            )
        return StepMetrics(
            step=step,
            train_loss=outcome.train_loss,
            val_loss=val_loss,
            intra_bytes=outcome.traffic.intra_bytes,
            inter_bytes=outcome.traffic.inter_bytes,
            sim_time_s=outcome.traffic.sim_time_s,
        )

    def _finish(self, result: TrainResult) -> None:
        if result.metrics:
            result.final_train_loss = result.metrics[-1].train_loss
            for metrics in reversed(result.metrics):
                if metrics.val_loss is not None:
                    result.final_val_loss = metrics.val_loss
                    break
        if result.ok:
            result.final_val_error = self.classification_error()
        result.traffic = self.cluster.ledger.summary()
        self.write_outputs(result)

    def write_outputs(self, result: TrainResult) -> None:
        output = self.config.output
        out_dir: Path = output.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / output.metrics_file).open("w", newline="") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            writer.writerows(metrics.row() for metrics in result.metrics)
        summary: dict[str, Any] = {
            "status": "ok" if result.ok else "diverged" if result.diverged else "failed",
            "error": result.error,
            "steps_completed": len(result.metrics),
            "final_train_loss": result.final_train_loss,
            "final_val_loss": result.final_val_loss,
            "final_val_error": result.final_val_error,
            "traffic": result.traffic,
            "config": self.config.to_mapping(),
        }
        (out_dir / output.summary_file).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        self.cluster.ledger.write_csv(out_dir / output.traffic_file)
        self.cluster.ledger.write_json(out_dir / output.traffic_summary_file)


def train(config: ExperimentConfig, status: SimStatus | None = None) -> TrainResult:
    return Trainer(config, status=status).run()
