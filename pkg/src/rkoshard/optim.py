# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Final

import numpy as np

from rkoshard import DivergenceError, Vector
from rkoshard.replication import CompressedUpdate, Replicator


class OptimizerKind(Enum):
    DEMO_SGD = "demo_sgd"
    DECOUPLED_ADAMW = "decoupled_adamw"
    BASELINE_ADAMW = "baseline_adamw"
    BASELINE_SGD = "baseline_sgd"

    @property
    def is_baseline(self) -> bool:
        return self in (OptimizerKind.BASELINE_ADAMW, OptimizerKind.BASELINE_SGD)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.DEMO_SGD
    learning_rate: float = 0.01
    momentum_decay: float = 0.999
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def violations(self) -> list[str]:
        problems: list[str] = []
        if not self.learning_rate > 0:
            problems.append(f"optimizer.learning_rate must be > 0, got {self.learning_rate}")
        for name in ("momentum_decay", "adam_beta1", "adam_beta2"):
            value: float = getattr(self, name)
            if not 0 < value < 1:
                problems.append(f"optimizer.{name} must be in (0, 1), got {value}")
        if not self.adam_eps > 0:
            problems.append(f"optimizer.adam_eps must be > 0, got {self.adam_eps}")
        if not self.weight_decay >= 0:
            problems.append(f"optimizer.weight_decay must be >= 0, got {self.weight_decay}")
        return problems


@dataclass
class MomentumState:
    """
    Optimizer state of one (node, shard). It is never exchanged: only the components a
    replicator extracts from it leave the accelerator.
    """

    m: Vector
    exp_avg: Vector
    exp_avg_sq: Vector
    step: int = 0

    @classmethod
    def zeros(cls, length: int) -> MomentumState:
        return cls(
            m=np.zeros(length, dtype=np.float64),
            exp_avg=np.zeros(length, dtype=np.float64),
            exp_avg_sq=np.zeros(length, dtype=np.float64),
        )

    def copy(self) -> MomentumState:
        return MomentumState(
            m=self.m.copy(), exp_avg=self.exp_avg.copy(), exp_avg_sq=self.exp_avg_sq.copy(), step=self.step
        )


@dataclass(frozen=True)
class LocalPhase:
    """
    The outcome of an optimizer's local phase, pending synchronization.

    :ivar update: What this replica offers its replication group.
    :ivar local_q: The unsigned components ``update`` was built from.
    :ivar local: The vector used in place of the merge when nothing is synchronized.
    :ivar gradient: The shard gradient of this step.
    :ivar accumulated: DeMo-SGD only: the momentum after accumulation, before extraction.
    """

    update: CompressedUpdate
    local_q: Vector
    local: Vector
    gradient: Vector
    accumulated: Vector | None = None


SyncFn = Callable[[CompressedUpdate, Vector], Vector]
"""Delivers an update to the replication group and returns the merged vector ``Q``."""


class Optimizer(ABC):
    """
    An optimizer step split in two phases around the inter-node synchronize:
    `local_phase` before it and `apply_phase` after it.
    """

    kind: OptimizerKind

    def __init__(self, config: OptimizerConfig, replicator: Replicator) -> None:
        self.config: Final[OptimizerConfig] = config
        self.replicator: Final[Replicator] = replicator

    @abstractmethod
    def local_phase(self, state: MomentumState, grad: Vector, step: int, shard_id: int) -> LocalPhase: ...

    @abstractmethod
    def apply_phase(
        self, state: MomentumState, params: Vector, phase: LocalPhase, merged: Vector, lr: float | None = None
    ) -> Vector:
        """:returns: The updated parameter shard."""

    def step(
        self,
        state: MomentumState,
        params: Vector,
        grad: Vector,
        step: int,
        shard_id: int = 0,
        sync: SyncFn | None = None,
        lr: float | None = None,
    ) -> tuple[Vector, CompressedUpdate]:
        """
        Runs both phases for a single shard.

        :param sync: The group merge; defaults to a replication group of one.
        :returns: The updated parameter shard and the update that was offered.
        """
        phase: LocalPhase = self.local_phase(state, grad, step, shard_id)
        merge: SyncFn = sync or (lambda update, local: self.replicator.merge([update], local))
        merged: Vector = merge(phase.update, phase.local)
        return self.apply_phase(state, params, phase, merged, lr), phase.update

    def _lr(self, lr: float | None) -> float:
        return self.config.learning_rate if lr is None else lr

    def _decayed(self, params: Vector, lr: float) -> Vector:
        if self.config.weight_decay == 0:
            return params
        return params * (1.0 - lr * self.config.weight_decay)

    @staticmethod
    def _check_finite(grad: Vector, step: int, shard_id: int) -> None:
        if not np.all(np.isfinite(grad)):
            bad: int = int(np.flatnonzero(~np.isfinite(grad))[0])
            raise DivergenceError(
                f"Non-finite gradient in shard {shard_id} at index {bad}: {grad[bad]}",
                step=step,
            )


class DemoSgd(Optimizer):
    """
    SGD over decoupled momentum: the gradient is accumulated into the local momentum, the
    replicator extracts components ``q`` from it, ``q`` is removed from the momentum, and the
    parameters move along the group-merged ``Q``.
    """

    kind = OptimizerKind.DEMO_SGD

    def local_phase(self, state: MomentumState, grad: Vector, step: int, shard_id: int) -> LocalPhase:
        self._check_finite(grad, step, shard_id)
        state.m = self.config.momentum_decay * state.m + grad
        accumulated: Vector = state.m
        update: CompressedUpdate
        q: Vector
        update, q = self.replicator.select(accumulated, step, shard_id)
        state.m = accumulated - q
        state.step += 1
        return LocalPhase(update=update, local_q=q, local=state.m.copy(), gradient=grad, accumulated=accumulated)

    def apply_phase(
        self, state: MomentumState, params: Vector, phase: LocalPhase, merged: Vector, lr: float | None = None
    ) -> Vector:
        rate: float = self._lr(lr)
        return self._decayed(params, rate) - rate * merged


class DecoupledAdamW(Optimizer):
    """
    AdamW whose first and second moments stay local. The components the replicator selects
    from the gradient are replaced by their group-merged values; every other component keeps
    its local value.
    """

    kind = OptimizerKind.DECOUPLED_ADAMW

    def _adamw(self, state: MomentumState, params: Vector, grad: Vector, lr: float) -> Vector:
        beta1: float = self.config.adam_beta1
        beta2: float = self.config.adam_beta2
        state.step += 1
        state.exp_avg = beta1 * state.exp_avg + (1.0 - beta1) * grad
        state.exp_avg_sq = beta2 * state.exp_avg_sq + (1.0 - beta2) * grad * grad
        correction1: float = 1.0 - beta1**state.step
        correction2: float = 1.0 - beta2**state.step
        denominator: Vector = np.sqrt(state.exp_avg_sq / correction2) + self.config.adam_eps
        return self._decayed(params, lr) - lr * (state.exp_avg / correction1) / denominator

    def local_phase(self, state: MomentumState, grad: Vector, step: int, shard_id: int) -> LocalPhase:
        self._check_finite(grad, step, shard_id)
        update: CompressedUpdate
        q: Vector
        update, q = self.replicator.select(grad, step, shard_id)
        return LocalPhase(update=update, local_q=q, local=grad, gradient=grad)

    def apply_phase(
        self, state: MomentumState, params: Vector, phase: LocalPhase, merged: Vector, lr: float | None = None
    ) -> Vector:
        return self._adamw(state, params, self.effective_gradient(phase, merged), self._lr(lr))

    @staticmethod
    def effective_gradient(phase: LocalPhase, merged: Vector) -> Vector:
        if not phase.update.synchronized:
            return phase.gradient
        return phase.gradient - phase.local_q + merged


class BaselineAdamW(DecoupledAdamW):
    """Standard AdamW on the group-mean gradient; run with the full scheme."""

    kind = OptimizerKind.BASELINE_ADAMW

    @staticmethod
    def effective_gradient(phase: LocalPhase, merged: Vector) -> Vector:
        return merged


class BaselineSgd(Optimizer):
    """Heavy-ball SGD on the group-mean gradient; run with the full scheme."""

    kind = OptimizerKind.BASELINE_SGD

    def local_phase(self, state: MomentumState, grad: Vector, step: int, shard_id: int) -> LocalPhase:
        self._check_finite(grad, step, shard_id)
        update: CompressedUpdate
        q: Vector
        update, q = self.replicator.select(grad, step, shard_id)
        return LocalPhase(update=update, local_q=q, local=grad, gradient=grad)

    def apply_phase(
        self, state: MomentumState, params: Vector, phase: LocalPhase, merged: Vector, lr: float | None = None
    ) -> Vector:
        rate: float = self._lr(lr)
        state.step += 1
        state.m = self.config.momentum_decay * state.m + merged
        return self._decayed(params, rate) - rate * state.m
