# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Final, Sequence

import numpy as np

from rkoshard import DivergenceError, ProtocolError, Vector
from rkoshard.compute import Batch, Model
from rkoshard.optim import LocalPhase, MomentumState, Optimizer
from rkoshard.replication import CompressedUpdate, Replicator, transmit

GRADIENT_BYTES: Final[int] = 4
"""Bytes per gradient element in the intra-node reduce-scatter (fp32)."""

MBPS: Final[float] = 1e6


class TopologyMode(Enum):
    HYBRID_SHARDED = "hybrid_sharded"
    DDP_ALL_GATHER = "ddp_all_gather"


class EventKind(Enum):
    REDUCE_SCATTER = "reduce_scatter"
    SYNCHRONIZE = "synchronize"


@dataclass(frozen=True)
class ClusterTopology:
    """
    ``num_nodes × accels_per_node`` accelerators, ranked node-major.

    In hybrid-sharded mode each node is one sharding group and accelerator ``i`` of every node
    forms replication group ``i``. In DDP all-gather mode nothing is sharded and all
    accelerators form a single replication group.
    """

    num_nodes: int = 1
    accels_per_node: int = 1
    mode: TopologyMode = TopologyMode.HYBRID_SHARDED

    @property
    def world_size(self) -> int:
        return self.num_nodes * self.accels_per_node

    @property
    def shard_count(self) -> int:
        return self.accels_per_node if self.mode is TopologyMode.HYBRID_SHARDED else 1

    def rank(self, node: int, accel: int) -> int:
        return node * self.accels_per_node + accel

    def node_of(self, rank: int) -> int:
        return rank // self.accels_per_node

    def shard_of(self, rank: int) -> int:
        return rank % self.accels_per_node if self.mode is TopologyMode.HYBRID_SHARDED else 0

    def sharding_groups(self) -> list[list[int]]:
        if self.mode is TopologyMode.DDP_ALL_GATHER:
            return [[rank] for rank in range(self.world_size)]
        return [[self.rank(node, accel) for accel in range(self.accels_per_node)] for node in range(self.num_nodes)]

    def replication_groups(self) -> list[list[int]]:
        if self.mode is TopologyMode.DDP_ALL_GATHER:
            return [list(range(self.world_size))]
        return [[self.rank(node, accel) for node in range(self.num_nodes)] for accel in range(self.accels_per_node)]

    def violations(self) -> list[str]:
        problems: list[str] = []
        if self.num_nodes < 1:
            problems.append(f"topology.num_nodes must be >= 1, got {self.num_nodes}")
        if self.accels_per_node < 1:
            problems.append(f"topology.accels_per_node must be >= 1, got {self.accels_per_node}")
        return problems


@dataclass(frozen=True)
class LinkModel:
    """Link bandwidths in bits per second and the fixed compute time of one step."""

    intra_node_bps: float
    inter_node_bps: float
    compute_time_s: float = 0.01

    @classmethod
    def from_mbps(cls, intra_node_mbps: float, inter_node_mbps: float, compute_time_s: float = 0.01) -> LinkModel:
        return cls(
            intra_node_bps=intra_node_mbps * MBPS,
            inter_node_bps=inter_node_mbps * MBPS,
            compute_time_s=compute_time_s,
        )

    def violations(self) -> list[str]:
        problems: list[str] = []
        if not self.intra_node_bps > 0:
            problems.append(f"link.intra_node_mbps must be > 0, got {self.intra_node_bps / MBPS}")
        if not self.inter_node_bps > 0:
            problems.append(f"link.inter_node_mbps must be > 0, got {self.inter_node_bps / MBPS}")
        if not self.compute_time_s > 0:
            problems.append(f"link.compute_time_s must be > 0, got {self.compute_time_s}")
        return problems


def step_time(intra_bytes: int, inter_bytes: int, link: LinkModel) -> float:
    """
    Simulated duration of one step. Compute, intra-node and inter-node phases run back to back.
    """
    return link.compute_time_s + intra_bytes * 8 / link.intra_node_bps + inter_bytes * 8 / link.inter_node_bps


@dataclass(frozen=True)
class TrafficEvent:
    step: int
    kind: EventKind
    group: int
    intra_bytes: int
    inter_bytes: int


@dataclass(frozen=True)
class StepTraffic:
    step: int
    intra_bytes: int
    inter_bytes: int
    sim_time_s: float
    """Cumulative simulated time at the end of the step."""


class TrafficLedger:
    """Exact per-step byte accounting per link class, and the simulated clock."""

    def __init__(self, link: LinkModel) -> None:
        self.link: Final[LinkModel] = link
        self.events: list[TrafficEvent] = []
        self.steps: list[StepTraffic] = []
        self.sim_time_s: float = 0.0
        self._step: int | None = None
        self._intra: int = 0
        self._inter: int = 0

    @property
    def total_intra_bytes(self) -> int:
        return sum(step.intra_bytes for step in self.steps)

    @property
    def total_inter_bytes(self) -> int:
        return sum(step.inter_bytes for step in self.steps)

    def begin_step(self, step: int) -> None:
        if self._step is not None:
            raise ProtocolError(f"Step {self._step} was never finished")
        self._step = step
        self._intra = 0
        self._inter = 0

    def charge(self, kind: EventKind, group: int, intra_bytes: int = 0, inter_bytes: int = 0) -> None:
        if self._step is None:
            raise ProtocolError("Traffic charged outside a step")
        self.events.append(TrafficEvent(self._step, kind, group, intra_bytes, inter_bytes))
        self._intra += intra_bytes
        self._inter += inter_bytes

    def end_step(self) -> StepTraffic:
        if self._step is None:
            raise ProtocolError("No step to finish")
        self.sim_time_s += step_time(self._intra, self._inter, self.link)
        traffic: StepTraffic = StepTraffic(self._step, self._intra, self._inter, self.sim_time_s)
        self.steps.append(traffic)
        self._step = None
        return traffic

    def event_counts(self, step: int | None = None) -> dict[str, int]:
        counts: dict[str, int] = {kind.value: 0 for kind in EventKind}
        for event in self.events:
            if step is None or event.step == step:
                counts[event.kind.value] += 1
        return counts

    def summary(self) -> dict[str, Any]:
        seconds: float = self.sim_time_s
        return {
            "steps": len(self.steps),
            "intra_bytes": self.total_intra_bytes,
            "inter_bytes": self.total_inter_bytes,
            "sim_time_s": seconds,
            "events": self.event_counts(),
            "intra_bandwidth_bps": self.total_intra_bytes * 8 / seconds if seconds else 0.0,
            "inter_bandwidth_bps": self.total_inter_bytes * 8 / seconds if seconds else 0.0,
        }

    def write_csv(self, path: Path) -> None:
        with path.open("w", newline="") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(["step", "intra_bytes", "inter_bytes", "sim_time_s"])
            for step in self.steps:
                writer.writerow([step.step, step.intra_bytes, step.inter_bytes, repr(step.sim_time_s)])

    def write_json(self, path: Path) -> None:
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def grad_reduce_scatter(grads: Sequence[Vector]) -> tuple[list[Vector], int]:
    """
    Averages the gradients of one sharding group and hands slice ``i`` of the mean to member ``i``.

    :returns: The shards and the intra-node bytes, ``(A − 1) × (P / A) × 4`` per member.
    """
    if not grads:
        raise ProtocolError("Cannot reduce-scatter an empty group")
    members: int = len(grads)
    length: int = len(grads[0])
    if any(len(grad) != length for grad in grads):
        raise ProtocolError(f"Reduce-scatter inputs differ in length: {[len(grad) for grad in grads]}")
    if length % members:
        raise ProtocolError(f"Gradient length {length} is not divisible by the group size {members}")
    total: Vector = np.zeros(length, dtype=np.float64)
    for grad in grads:
        total = total + grad
    mean: Vector = total / members
    shard_len: int = length // members
    shards: list[Vector] = [mean[i * shard_len : (i + 1) * shard_len].copy() for i in range(members)]
    return shards, members * (members - 1) * shard_len * GRADIENT_BYTES


def synchronize(
    members: Sequence[int],
    updates: Sequence[CompressedUpdate],
    locals_: Sequence[Vector],
    replicator: Replicator,
    topology: ClusterTopology,
) -> tuple[list[Vector], int, int]:
    """
    All-gathers the updates of one replication group and merges them at every member.

    Each member's message crosses once to every other node hosting a member and once to every
    other member on its own node; those receivers see the same decoded message.

    :returns: The merged vector for each member, intra-node bytes and inter-node bytes.
    """
    if not len(members) == len(updates) == len(locals_):
        raise ProtocolError(f"{len(members)} members but {len(updates)} updates")
    if len(members) == 1 or not updates[0].synchronized:
        return [replicator.merge([update], local) for update, local in zip(updates, locals_)], 0, 0

    received: list[CompressedUpdate] = []
    intra: int = 0
    inter: int = 0
    for rank, update in zip(members, updates):
        wire: CompressedUpdate
        size: int
        wire, size = transmit(update, replicator)
        received.append(wire)
        node: int = topology.node_of(rank)
        others: list[int] = [topology.node_of(other) for other in members if other != rank]
        intra += sum(1 for other in others if other == node) * size
        inter += len({other for other in others if other != node}) * size
    merged: Vector = replicator.merge(received)
    return [merged] * len(members), intra, inter


@dataclass(frozen=True)
class StepResult:
    train_loss: float
    traffic: StepTraffic


class VirtualCluster:
    """
    Runs the collective schedule of a step over virtual accelerators, sequentially in rank order.
    Each rank owns its parameter shard and its optimizer state.
    """

    def __init__(
        self,
        topology: ClusterTopology,
        model: Model,
        optimizer: Optimizer,
        link: LinkModel,
        init_params: Vector,
    ) -> None:
        if model.flat_size % topology.shard_count:
            raise ProtocolError(
                f"{model.flat_size} parameters cannot be split into {topology.shard_count} equal shards"
            )
        self.topology: Final[ClusterTopology] = topology
        self.model: Final[Model] = model
        self.optimizer: Final[Optimizer] = optimizer
        self.replicator: Final[Replicator] = optimizer.replicator
        self.ledger: Final[TrafficLedger] = TrafficLedger(link)
        self.shard_len: Final[int] = model.flat_size // topology.shard_count
        self.shards: list[Vector] = [
            self._slice(init_params, topology.shard_of(rank)) for rank in range(topology.world_size)
        ]
        self.states: list[MomentumState] = [MomentumState.zeros(self.shard_len) for _ in range(topology.world_size)]

    def _slice(self, params: Vector, shard: int) -> Vector:
        return params[shard * self.shard_len : (shard + 1) * self.shard_len].astype(np.float64, copy=True)

    def node_params(self, node: int) -> Vector:
        """:returns: The full parameter vector as assembled on ``node``."""
        if self.topology.mode is TopologyMode.DDP_ALL_GATHER:
            return self.shards[self.topology.rank(node, 0)]
        ranks: list[int] = [self.topology.rank(node, accel) for accel in range(self.topology.accels_per_node)]
        return np.concatenate([self.shards[rank] for rank in ranks])

    def params(self) -> Vector:
        return self.node_params(0)

    def _visible_params(self, rank: int) -> Vector:
        if self.topology.mode is TopologyMode.DDP_ALL_GATHER:
            return self.shards[rank]
        return self.node_params(self.topology.node_of(rank))

    def run_collective_schedule(self, step: int, batches: Sequence[Batch], lr: float | None = None) -> StepResult:
        """
        Runs one step: local backward on every rank, reduce-scatter per sharding group, the
        optimizer's local phase, synchronize per replication group, then the parameter update.

        :param batches: One batch per rank.
        :returns: The mean training loss over the ranks and the step's traffic.
        """
        world: int = self.topology.world_size
        if len(batches) != world:
            raise ProtocolError(f"Expected {world} batches, got {len(batches)}")
        self.ledger.begin_step(step)

        losses: list[float] = []
        grads: list[Vector] = []
        for rank in range(world):
            params: Vector = self._visible_params(rank)
            loss: float = self.model.forward_loss(params, batches[rank])
            if not np.isfinite(loss):
                raise DivergenceError(f"Non-finite training loss {loss}", step=step, rank=rank)
            losses.append(loss)
            grads.append(self.model.backward(params, batches[rank]))

        shard_grads: list[Vector] = [np.zeros(0)] * world
        for index, group in enumerate(self.topology.sharding_groups()):
            shards: list[Vector]
            intra: int
            shards, intra = grad_reduce_scatter([grads[rank] for rank in group])
            for rank, shard in zip(group, shards):
                shard_grads[rank] = shard
            if len(group) > 1:
                self.ledger.charge(EventKind.REDUCE_SCATTER, index, intra_bytes=intra)

        phases: list[LocalPhase] = []
        for rank in range(world):
            try:
                phases.append(
                    self.optimizer.local_phase(self.states[rank], shard_grads[rank], step, self.topology.shard_of(rank))
                )
            except DivergenceError as e:
                raise DivergenceError(e.detail, step=step, rank=rank) from e

        merged: list[Vector] = [np.zeros(0)] * world
        for index, group in enumerate(self.topology.replication_groups()):
            results: list[Vector]
            inter: int
            results, intra, inter = synchronize(
                group,
                [phases[rank].update for rank in group],
                [phases[rank].local for rank in group],
                self.replicator,
                self.topology,
            )
            for rank, result in zip(group, results):
                merged[rank] = result
            if len(group) > 1 and phases[group[0]].update.synchronized:
                self.ledger.charge(EventKind.SYNCHRONIZE, index, intra_bytes=intra, inter_bytes=inter)

        for rank in range(world):
            self.shards[rank] = self.optimizer.apply_phase(
                self.states[rank], self.shards[rank], phases[rank], merged[rank], lr
            )

        traffic: StepTraffic = self.ledger.end_step()
        total: float = 0.0
        for loss in losses:
            total += loss
        return StepResult(train_loss=total / world, traffic=traffic)
