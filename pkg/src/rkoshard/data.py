# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Final

import numpy as np
import numpy.typing as npt

from rkoshard import ConfigError, Matrix
from rkoshard.compute import Batch

TRAIN_FRACTION: Final[float] = 0.8
MIN_SIZE: Final[int] = 10

# Stream tags keep the generators of different consumers of one seed independent.
DATA_STREAM: Final[int] = 0
BATCH_STREAM: Final[int] = 1
INIT_STREAM: Final[int] = 2


def seeded_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


class DatasetKind(Enum):
    QUADRATIC_TARGET = "quadratic_target"
    GAUSSIAN_BLOBS = "gaussian_blobs"
    LINEAR_REGRESSION = "linear_regression"


@dataclass(frozen=True)
class DataConfig:
    kind: DatasetKind = DatasetKind.QUADRATIC_TARGET
    size: int = 512
    noise: float = 0.1
    num_classes: int = 3
    separation: float = 4.0
    input_dim: int = 2
    output_dim: int = 1

    def violations(self) -> list[str]:
        problems: list[str] = []
        if self.size < MIN_SIZE:
            problems.append(f"data.size must be >= {MIN_SIZE}, got {self.size}")
        if self.noise < 0:
            problems.append(f"data.noise must be >= 0, got {self.noise}")
        if self.input_dim < 1:
            problems.append(f"data.input_dim must be >= 1, got {self.input_dim}")
        if self.output_dim < 1:
            problems.append(f"data.output_dim must be >= 1, got {self.output_dim}")
        if self.kind is DatasetKind.GAUSSIAN_BLOBS and self.num_classes < 2:
            problems.append(f"data.num_classes must be >= 2, got {self.num_classes}")
        return problems


@dataclass(frozen=True)
class Dataset:
    """
    A train/validation split. ``weights`` and ``bias`` hold the generating parameters of a
    linear-regression dataset.
    """

    train: Batch
    val: Batch
    weights: Matrix | None = None
    bias: npt.NDArray[np.float64] | None = None


def make_dataset(config: DataConfig, seed: int) -> Dataset:
    """
    Generates ``config.size`` examples deterministically from ``seed`` and holds out the last 20%.
    """
    if config.size < MIN_SIZE:
        raise ConfigError(f"Datasets need at least {MIN_SIZE} examples, got {config.size}")
    rng: np.random.Generator = seeded_rng(seed, DATA_STREAM)
    count: int = config.size
    dim: int = config.input_dim
    full: Batch
    weights: Matrix | None = None
    bias: npt.NDArray[np.float64] | None = None

    if config.kind is DatasetKind.QUADRATIC_TARGET:
        center: npt.NDArray[np.float64] = rng.standard_normal(dim)
        full = Batch(inputs=center + config.noise * rng.standard_normal((count, dim)))
    elif config.kind is DatasetKind.GAUSSIAN_BLOBS:
        directions: Matrix = rng.standard_normal((config.num_classes, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        means: Matrix = config.separation * directions
        labels: npt.NDArray[np.int64] = rng.integers(0, config.num_classes, size=count)
        full = Batch(inputs=means[labels] + rng.standard_normal((count, dim)), targets=labels)
    else:
        weights = rng.standard_normal((config.output_dim, dim))
        bias = rng.standard_normal(config.output_dim)
        inputs: Matrix = rng.standard_normal((count, dim))
        targets: Matrix = inputs @ weights.T + bias + config.noise * rng.standard_normal((count, config.output_dim))
        full = Batch(inputs=inputs, targets=targets)

    split: int = int(np.floor(TRAIN_FRACTION * count))
    return Dataset(
        train=full.rows(np.arange(split)),
        val=full.rows(np.arange(split, count)),
        weights=weights,
        bias=bias,
    )


def step_batches(train: Batch, seed: int, step: int, world_size: int, batch_size: int) -> list[Batch]:
    """
    Draws one batch per rank for ``step``. A permutation seeded by ``(seed, step)`` is cut into
    consecutive slices, so the batches of a step never overlap and rank ``r``'s batch is slice
    ``r`` of the step's global batch.
    """
    needed: int = world_size * batch_size
    if needed > train.size:
        raise ConfigError(
            f"A step needs {needed} examples ({world_size} ranks × {batch_size}) but the train split has {train.size}"
        )
    order: npt.NDArray[np.int64] = seeded_rng(seed, BATCH_STREAM, step).permutation(train.size)
    return [train.rows(order[rank * batch_size : (rank + 1) * batch_size]) for rank in range(world_size)]
