# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

"""
The built-in oracle suite behind ``rkoshard verify``. Every check compares the simulator against
an independent computation (finite differences, brute-force sorts, hand-counted bytes, a
standalone training loop) and reports pass or fail.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Final, Iterator

import numpy as np

from rkoshard import NullStatus, SimException, SimStatus, Vector
from rkoshard.cluster import ClusterTopology, LinkModel, TopologyMode, VirtualCluster, step_time
from rkoshard.compute import Activation, Batch, LossKind, MlpModel, Model, QuadraticModel, gradient_check
from rkoshard.config import ExperimentConfig, config_from
from rkoshard.data import make_dataset, seeded_rng, step_batches
from rkoshard.factories import ReplicatorFactory
from rkoshard.optim import DemoSgd, MomentumState, OptimizerConfig
from rkoshard.replication import (
    RandomReplicator,
    ReplicatorConfig,
    Scheme,
    StridingReplicator,
    TransferDtype,
)
from rkoshard.trainer import Trainer, train
from rkoshard.transform import dct2, extract_fast_components, idct3, top_k_indices

Transform = Callable[[Vector], Vector]

GRADIENT_TOLERANCE: Final[float] = 1e-5
TRANSFORM_TOLERANCE: Final[float] = 1e-9
TRANSFORM_SIZES: Final[tuple[int, ...]] = (1, 2, 16, 32, 128, 256)
VECTORS_PER_SIZE: Final[int] = 100
EQUIVALENCE_STEPS: Final[int] = 200
EQUIVALENCE_TOLERANCE: Final[float] = 1e-9


class VerificationFailure(SimException):
    pass


@dataclass(frozen=True)
class Check:
    section: str
    name: str
    run: Callable[[], str]


@dataclass
class VerifyReport:
    passed: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise VerificationFailure(message)


class Verifier:
    """
    :param dct: The forward transform under test.
    :param idct: The inverse transform under test.
    """

    def __init__(
        self,
        status: SimStatus | None = None,
        dct: Transform = dct2,
        idct: Transform = idct3,
        seed: int = 0,
    ) -> None:
        self.status: Final[SimStatus] = status or NullStatus()
        self.dct: Final[Transform] = dct
        self.idct: Final[Transform] = idct
        self.seed: Final[int] = seed

    def checks(self) -> list[Check]:
        return [
            Check("compute", "analytic gradients match finite differences", self.check_gradients),
            Check("transform", "DCT round trip", self.check_round_trip),
            Check("transform", "Parseval", self.check_parseval),
            Check("transform", "extraction splits the energy", self.check_energy_split),
            Check("transform", "top-k selection is optimal", self.check_selection),
            Check("replication", "byte ratios at compression 1/16", self.check_byte_ratios),
            Check("replication", "seeded indices agree across replicas", self.check_seeded_indices),
            Check("cluster", "all-gather scaling", self.check_gather_scaling),
            Check("cluster", "step-time ordering at 10 Mbps", self.check_step_time_ordering),
            Check("optim", "momentum conservation", self.check_momentum_conservation),
            Check("optim", "full replication on one accelerator matches the reference loop", self.check_collapse),
            Check("optim", "full-band DeMo matches full replication", self.check_full_band_demo),
            Check("optim", "two nodes match one node on the same global batch", self.check_node_scaling),
            Check("harness", "identical runs write identical metrics", self.check_determinism),
        ]

    def run(self) -> VerifyReport:
        report: VerifyReport = VerifyReport()
        section: str | None = None
        for check in self.checks():
            if check.section != section:
                if section is not None:
                    self.status.finish_section(section)
                section = check.section
                self.status.start_section(section)
            self.status.start_item(check.name)
            try:
                detail: str = check.run()
            except Exception as e:
                report.failed.append((check.name, str(e)))
                self.status.finish_item(error=e)
                continue
            report.passed.append(check.name)
            self.status.finish_item(f"passed ({detail}).")
        if section is not None:
            self.status.finish_section(section)
        return report

    def _rng(self, *keys: int) -> np.random.Generator:
        return seeded_rng(self.seed, *keys)

    def check_gradients(self) -> str:
        worst: float = 0.0
        for case in range(20):
            rng: np.random.Generator = self._rng(10, case)
            model: Model
            batch: Batch
            if case % 3 == 0:
                model = QuadraticModel(dim=4)
                batch = Batch(inputs=rng.standard_normal((5, 4)))
                params: Vector = rng.standard_normal(model.flat_size)
            elif case % 3 == 1:
                model = MlpModel([3, 5, 2], activation=Activation.TANH, loss=LossKind.MSE)
                batch = Batch(inputs=rng.standard_normal((6, 3)), targets=rng.standard_normal((6, 2)))
                params = model.init_params(rng)
            else:
                model = MlpModel([3, 4, 3], activation=Activation.TANH, loss=LossKind.CROSS_ENTROPY)
                batch = Batch(inputs=rng.standard_normal((6, 3)), targets=rng.integers(0, 3, size=6))
                params = model.init_params(rng)
            error: float = gradient_check(model, params, batch, h=1e-5)
            _expect(error < GRADIENT_TOLERANCE, f"case {case}: relative error {error:.3g}")
            worst = max(worst, error)
        return f"worst relative error {worst:.2e}"

    def _vectors(self, key: int) -> Iterator[tuple[int, Vector]]:
        for s in TRANSFORM_SIZES:
            rng: np.random.Generator = self._rng(key, s)
            for _ in range(VECTORS_PER_SIZE):
                yield s, rng.standard_normal(s)

    def check_round_trip(self) -> str:
        worst: float = 0.0
        for s, x in self._vectors(20):
            error: float = float(np.max(np.abs(self.idct(self.dct(x)) - x)))
            _expect(error < TRANSFORM_TOLERANCE, f"s={s}: round-trip error {error:.3g}")
            worst = max(worst, error)
        return f"worst error {worst:.1e}"

    def check_parseval(self) -> str:
        worst: float = 0.0
        for s, x in self._vectors(21):
            energy: float = float(np.dot(x, x))
            coefficients: Vector = self.dct(x)
            error: float = abs(float(np.dot(coefficients, coefficients)) - energy) / energy
            _expect(error < TRANSFORM_TOLERANCE, f"s={s}: relative energy error {error:.3g}")
            worst = max(worst, error)
        return f"worst relative error {worst:.1e}"

    def check_energy_split(self) -> str:
        rng: np.random.Generator = self._rng(22)
        for s, k in ((32, 2), (32, 4), (16, 16), (8, 1)):
            m: Vector = rng.standard_normal(10 * s)
            q: Vector
            rest: Vector
            _, q, rest = extract_fast_components(m, s, k)
            energy: float = float(np.dot(m, m))
            split: float = float(np.dot(q, q) + np.dot(rest, rest))
            _expect(abs(split - energy) / energy < TRANSFORM_TOLERANCE, f"s={s}, k={k}: {split} != {energy}")
        return "4 layouts"

    def check_selection(self) -> str:
        rng: np.random.Generator = self._rng(23)
        for trial in range(50):
            coefficients = rng.standard_normal((4, 16))
            coefficients[0, :4] = 0.5  # ties
            k: int = 1 + trial % 16
            chosen = top_k_indices(coefficients, k)
            for row, indices in zip(coefficients, chosen):
                expected: list[int] = sorted(sorted(range(len(row)), key=lambda i: (-abs(row[i]), i))[:k])
                _expect(list(indices) == expected, f"k={k}: chose {list(indices)}, expected {expected}")
        return "50 trials"

    def _wire_bytes(self, scheme: Scheme, compression: Fraction, length: int = 1024) -> int:
        config: ReplicatorConfig = ReplicatorConfig(
            scheme=scheme, compression=compression, transfer_dtype=TransferDtype.FP32
        )
        v: Vector = self._rng(30).standard_normal(length)
        return ReplicatorFactory.create(config).select(v, step=0, shard_id=0)[0].wire_bytes

    def check_byte_ratios(self) -> str:
        random: int = self._wire_bytes(Scheme.RANDOM, Fraction(1, 16))
        demo: int = self._wire_bytes(Scheme.DEMO, Fraction(1, 16))
        full: int = self._wire_bytes(Scheme.FULL, Fraction(1))
        _expect(demo == 2 * random, f"DeMo/Random = {demo / random:.3f}")
        _expect(full == 16 * random, f"Full/Random = {full / random:.3f}")
        return f"DeMo/Random = {demo / random:.3f}, Full/Random = {full / random:.3f}"

    def check_seeded_indices(self) -> str:
        for scheme in (Scheme.RANDOM, Scheme.STRIDING):
            config: ReplicatorConfig = ReplicatorConfig(scheme=scheme, compression=Fraction(1, 8), seed=self.seed)
            replicas: list[RandomReplicator | StridingReplicator] = [
                RandomReplicator(config) if scheme is Scheme.RANDOM else StridingReplicator(config) for _ in range(4)
            ]
            v: Vector = self._rng(31).standard_normal(64)
            for step in range(1000):
                for shard in range(2):
                    updates = [replica.select(v, step, shard)[0] for replica in replicas]
                    first = updates[0].positions
                    _expect(
                        all(np.array_equal(update.positions, first) for update in updates),
                        f"{scheme.value}: replicas disagree at step {step}, shard {shard}",
                    )
                    _expect(all(update.n_indices == 0 for update in updates), f"{scheme.value} sent indices")
        return "1000 steps, 2 shards, 4 replicas"

    def _one_step_inter_bytes(self, mode: TopologyMode) -> int:
        topology: ClusterTopology = ClusterTopology(num_nodes=2, accels_per_node=4, mode=mode)
        model: QuadraticModel = QuadraticModel(dim=1024)
        replicator = ReplicatorFactory.create(ReplicatorConfig(scheme=Scheme.DEMO, compression=Fraction(1, 16)))
        cluster: VirtualCluster = VirtualCluster(
            topology, model, DemoSgd(OptimizerConfig(), replicator), LinkModel.from_mbps(1e5, 1e4), np.zeros(1024)
        )
        rng: np.random.Generator = self._rng(40)
        batches: list[Batch] = [Batch(inputs=rng.standard_normal((2, 1024))) for _ in range(topology.world_size)]
        return cluster.run_collective_schedule(0, batches).traffic.inter_bytes

    def check_gather_scaling(self) -> str:
        hybrid: int = self._one_step_inter_bytes(TopologyMode.HYBRID_SHARDED)
        ddp: int = self._one_step_inter_bytes(TopologyMode.DDP_ALL_GATHER)
        _expect(ddp == 4 * hybrid, f"all-gather {ddp} B vs hybrid {hybrid} B")
        return f"{ddp} B vs {hybrid} B"

    def check_step_time_ordering(self) -> str:
        link: LinkModel = LinkModel.from_mbps(100_000, 10)

        def seconds(scheme: Scheme, compression: Fraction) -> float:
            # One member of a two-node replication group sends its message once.
            return step_time(0, self._wire_bytes(scheme, compression, length=1 << 16), link)

        full: float = seconds(Scheme.FULL, Fraction(1))
        demo_16: float = seconds(Scheme.DEMO, Fraction(1, 16))
        demo_32: float = seconds(Scheme.DEMO, Fraction(1, 32))
        random_16: float = seconds(Scheme.RANDOM, Fraction(1, 16))
        random_32: float = seconds(Scheme.RANDOM, Fraction(1, 32))
        _expect(full > demo_16 > random_16 > random_32, "ordering Full > DeMo > Random 1/16 > Random 1/32 broken")
        _expect(abs(random_16 - demo_32) <= 0.1 * demo_32, f"Random 1/16 {random_16:.4f}s vs DeMo 1/32 {demo_32:.4f}s")
        return f"full {full:.3f}s, demo {demo_16:.3f}s, random {random_16:.3f}s"

    def check_momentum_conservation(self) -> str:
        replicator = ReplicatorFactory.create(
            ReplicatorConfig(scheme=Scheme.DEMO, chunk_size=32, top_k=4, transfer_dtype=TransferDtype.FP64)
        )
        optimizer: DemoSgd = DemoSgd(OptimizerConfig(), replicator)
        state: MomentumState = MomentumState.zeros(96)
        rng: np.random.Generator = self._rng(50)
        for step in range(500):
            phase = optimizer.local_phase(state, rng.standard_normal(96), step, 0)
            assert phase.accumulated is not None
            _expect(np.array_equal(state.m, phase.accumulated - phase.local_q), f"step {step}: m_after != m - q")
            _expect(
                float(np.max(np.abs(phase.local_q + state.m - phase.accumulated))) <= 1e-12,
                f"step {step}: q + m_after drifts from m",
            )
        return "500 steps"

    def _collapse_config(self, out_dir: Path) -> ExperimentConfig:
        return config_from(
            {
                "model": {"kind": "quadratic", "dim": 8},
                "replicator": {"scheme": "full", "compression": 1, "sign": False, "transfer_dtype": "fp64"},
                "optimizer": {"learning_rate": 0.05, "momentum_decay": 0.9},
                "steps": 50,
                "batch_size": 4,
                "seed": self.seed,
                "output": {"out_dir": str(out_dir)},
            }
        )

    def check_collapse(self) -> str:
        with tempfile.TemporaryDirectory() as tmp:
            config: ExperimentConfig = self._collapse_config(Path(tmp))
            losses: list[float] = [metrics.train_loss for metrics in train(config).metrics]

        dataset = make_dataset(config.data, config.seed)
        theta: Vector = np.zeros(config.model.dim)
        m: Vector = np.zeros(config.model.dim)
        beta: float = config.optimizer.momentum_decay
        lr: float = config.optimizer.learning_rate
        for step in range(config.steps):
            batch: Batch = step_batches(dataset.train, config.seed, step, 1, config.batch_size)[0]
            diff = theta[np.newaxis, :] - batch.inputs
            expected_loss: float = float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
            _expect(losses[step] == expected_loss, f"step {step}: {losses[step]!r} != {expected_loss!r}")
            grad: Vector = theta - np.mean(batch.inputs, axis=0)
            m = beta * m + grad
            theta = theta - lr * m
            m = m - m
        return f"{config.steps} steps bit-identical"

    def _trajectory(self, config: ExperimentConfig) -> list[Vector]:
        trainer: Trainer = Trainer(config)
        params: list[Vector] = []
        for step in range(config.steps):
            trainer.train_step(step)
            params.append(trainer.cluster.params().copy())
        return params

    def _equivalence_config(self, nodes: int, accels: int, batch_size: int, **replicator: Any) -> ExperimentConfig:
        return config_from(
            {
                "topology": {"num_nodes": nodes, "accels_per_node": accels},
                "model": {"kind": "quadratic", "dim": 64},
                "replicator": {"sign": False, **replicator},
                "optimizer": {"learning_rate": 0.05, "momentum_decay": 0.9},
                "steps": EQUIVALENCE_STEPS,
                "batch_size": batch_size,
                "seed": self.seed,
            }
        )

    def _distance(self, first: ExperimentConfig, second: ExperimentConfig) -> float:
        pairs = zip(self._trajectory(first), self._trajectory(second))
        worst: float = max(float(np.max(np.abs(a - b))) for a, b in pairs)
        _expect(worst < EQUIVALENCE_TOLERANCE, f"trajectories differ by {worst:.3g}")
        return worst

    def check_full_band_demo(self) -> str:
        # Updates are narrowed only when they cross a link, so two nodes run in fp64.
        worst: float = 0.0
        for nodes, dtype in ((1, "fp32"), (2, "fp64")):
            full = self._equivalence_config(nodes, 2, 8, scheme="full", compression=1, transfer_dtype=dtype)
            demo = self._equivalence_config(
                nodes, 2, 8, scheme="demo", compression=1, chunk_size=32, transfer_dtype=dtype
            )
            worst = max(worst, self._distance(full, demo))
        return f"max distance {worst:.2e} over {EQUIVALENCE_STEPS} steps"

    def check_node_scaling(self) -> str:
        two = self._equivalence_config(2, 1, 8, scheme="full", compression=1, transfer_dtype="fp64")
        one = self._equivalence_config(1, 1, 16, scheme="full", compression=1, transfer_dtype="fp64")
        return f"max distance {self._distance(two, one):.2e} over {EQUIVALENCE_STEPS} steps"

    def check_determinism(self) -> str:
        outputs: list[bytes] = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as tmp:
                config: ExperimentConfig = config_from(
                    {
                        "topology": {"num_nodes": 2, "accels_per_node": 2},
                        "model": {"kind": "mlp", "layer_dims": [2, 8, 2], "loss": "cross_entropy"},
                        "data": {"size": 200},
                        "replicator": {"scheme": "demo", "compression": "1/4", "chunk_size": 8},
                        "steps": 20,
                        "batch_size": 4,
                        "seed": self.seed,
                        "output": {"out_dir": tmp},
                    }
                )
                train(config)
                outputs.append((Path(tmp) / config.output.metrics_file).read_bytes())
        _expect(outputs[0] == outputs[1], "metrics differ between identical runs")
        return f"{len(outputs[0])} bytes"


def verify(status: SimStatus | None = None, dct: Transform = dct2, idct: Transform = idct3) -> VerifyReport:
    return Verifier(status=status, dct=dct, idct=idct).run()

