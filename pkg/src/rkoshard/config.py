# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import partial
from pathlib import Path
from typing import Any, Callable, Final, Mapping

import yaml

from rkoshard import ConfigError, require
from rkoshard.cluster import ClusterTopology, LinkModel, TopologyMode
from rkoshard.coerce import as_bool, as_enum, as_float, as_fraction, as_int, as_int_list, as_path, as_str
from rkoshard.compute import Activation, LossKind, ModelKind, padded_size
from rkoshard.data import TRAIN_FRACTION, DataConfig, DatasetKind
from rkoshard.optim import OptimizerConfig, OptimizerKind
from rkoshard.replication import MAX_SEED, ReplicatorConfig, Scheme, SignDomain, TransferDtype


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.QUADRATIC
    dim: int = 2
    layer_dims: tuple[int, ...] = (2, 16, 1)
    activation: Activation = Activation.TANH
    loss: LossKind = LossKind.MSE
    pad_to_shards: bool = False

    @property
    def param_count(self) -> int:
        if self.kind is ModelKind.QUADRATIC:
            return self.dim
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def violations(self) -> list[str]:
        if self.kind is ModelKind.QUADRATIC:
            return [] if self.dim >= 1 else [f"model.dim must be >= 1, got {self.dim}"]
        if len(self.layer_dims) < 2 or any(dim < 1 for dim in self.layer_dims):
            return [f"model.layer_dims needs at least two positive sizes, got {list(self.layer_dims)}"]
        return []


@dataclass(frozen=True)
class LinkConfig:
    intra_node_mbps: float = 100_000.0
    inter_node_mbps: float = 10_000.0
    compute_time_s: float = 0.01

    def link_model(self) -> LinkModel:
        return LinkModel.from_mbps(self.intra_node_mbps, self.inter_node_mbps, self.compute_time_s)


@dataclass(frozen=True)
class OutputConfig:
    out_dir: Path = Path("out")
    metrics_file: str = "metrics.csv"
    summary_file: str = "summary.json"
    traffic_file: str = "traffic.csv"
    traffic_summary_file: str = "traffic.json"


@dataclass(frozen=True)
class ExperimentConfig:
    topology: ClusterTopology = field(default_factory=ClusterTopology)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    replicator: ReplicatorConfig = field(default_factory=ReplicatorConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    steps: int = 100
    batch_size: int = 8
    eval_every: int = 10
    warmup_fraction: float = 0.0
    seed: int = 0
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def warmup_steps(self) -> int:
        return int(self.warmup_fraction * self.steps)

    @property
    def flat_size(self) -> int:
        multiple: int = self.topology.shard_count if self.model.pad_to_shards else 1
        return padded_size(self.model.param_count, multiple)

    @property
    def shard_len(self) -> int:
        return self.flat_size // self.topology.shard_count

    @property
    def effective_replicator(self) -> ReplicatorConfig:
        """The replicator actually run: baseline optimizers always synchronize everything, unsigned."""
        if not self.optimizer.kind.is_baseline:
            return self.replicator
        return ReplicatorConfig(
            scheme=Scheme.FULL,
            compression=Fraction(1),
            sign=False,
            transfer_dtype=self.replicator.transfer_dtype,
            seed=self.replicator.seed,
        )

    def violations(self) -> list[str]:
        problems: list[str] = []
        structural: list[str] = self.topology.violations() + self.model.violations() + self.data.violations()
        problems += structural
        problems += self.optimizer.violations()
        problems += self.link.link_model().violations()
        if self.steps < 1:
            problems.append(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            problems.append(f"eval_every must be >= 1, got {self.eval_every}")
        if not 0 <= self.warmup_fraction < 1:
            problems.append(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if not 0 <= self.seed < MAX_SEED:
            problems.append(f"seed must be an unsigned 64-bit value, got {self.seed}")
        if structural:
            return problems
        problems += self._model_data_violations()

        shard_count: int = self.topology.shard_count
        if not self.model.pad_to_shards and self.model.param_count % shard_count:
            problems.append(
                f"model has {self.model.param_count} parameters, not divisible by the sharding group size "
                f"{shard_count} (set model.pad_to_shards to pad)"
            )
        else:
            problems += self.effective_replicator.violations(self.shard_len)
        train_size: int = int(TRAIN_FRACTION * self.data.size)
        needed: int = self.topology.world_size * self.batch_size
        if needed > train_size:
            problems.append(
                f"a step needs {needed} examples ({self.topology.world_size} accelerators × batch_size "
                f"{self.batch_size}) but the train split has {train_size}"
            )
        return problems

    def _model_data_violations(self) -> list[str]:
        model: ModelConfig = self.model
        data: DataConfig = self.data
        if model.kind is ModelKind.QUADRATIC:
            if data.kind is not DatasetKind.QUADRATIC_TARGET:
                return [f"model.kind quadratic needs data.kind quadratic_target, got {data.kind.value}"]
            if model.dim != data.input_dim:
                return [f"model.dim {model.dim} must equal data.input_dim {data.input_dim}"]
            return []
        problems: list[str] = []
        if model.layer_dims[0] != data.input_dim:
            problems.append(f"model.layer_dims[0] {model.layer_dims[0]} must equal data.input_dim {data.input_dim}")
        if model.loss is LossKind.CROSS_ENTROPY:
            if data.kind is not DatasetKind.GAUSSIAN_BLOBS:
                problems.append(f"model.loss cross_entropy needs data.kind gaussian_blobs, got {data.kind.value}")
            elif model.layer_dims[-1] != data.num_classes:
                problems.append(
                    f"model.layer_dims[-1] {model.layer_dims[-1]} must equal data.num_classes {data.num_classes}"
                )
        else:
            if data.kind is not DatasetKind.LINEAR_REGRESSION:
                problems.append(f"model.loss mse needs data.kind linear_regression, got {data.kind.value}")
            elif model.layer_dims[-1] != data.output_dim:
                problems.append(
                    f"model.layer_dims[-1] {model.layer_dims[-1]} must equal data.output_dim {data.output_dim}"
                )
        return problems

    def to_mapping(self) -> dict[str, Any]:
        """
        :returns: This config as the nested mapping `from_mapping` reads, with plain YAML/JSON values.
         The derived ``replicator.top_k`` is left out; ``replicator.compression`` determines it.
        """
        data: dict[str, Any] = _plain(asdict(self))
        data["replicator"]["top_k"] = None
        return data

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        """
        Builds and validates a config. Unknown keys, uncoercible values and every constraint
        violation are reported together in one `ConfigError`.
        """
        problems: list[str] = []
        unknown: list[str] = sorted(set(data) - set(_SECTIONS) - set(_SCALARS))
        problems += [f"Unknown key: {key}" for key in unknown]

        sections: dict[str, Any] = {
            name: _build_section(name, section_type, coercers, data.get(name), problems)
            for name, (section_type, coercers) in _SECTIONS.items()
        }
        scalars: dict[str, Any] = {}
        for name, coercer in _SCALARS.items():
            if name in data:
                try:
                    scalars[name] = coercer(data[name])
                except ValueError as e:
                    problems.append(f"{name}: {e}")
        require(problems)

        sections["data"] = _infer_data(sections["model"], sections["data"], data.get("data") or {})
        config: ExperimentConfig = cls(**sections, **scalars)
        require(config.violations())
        return config


def _optional(coercer: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def coerce(value: Any) -> Any:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
            return None
        return coercer(value)

    return coerce


def _as_dims(value: Any) -> tuple[int, ...]:
    return tuple(as_int_list(value))


Coercers = dict[str, Callable[[Any], Any]]

_SECTIONS: Final[dict[str, tuple[type, Coercers]]] = {
    "topology": (
        ClusterTopology,
        {
            "num_nodes": as_int,
            "accels_per_node": as_int,
            "mode": partial(as_enum, enum_type=TopologyMode),
        },
    ),
    "model": (
        ModelConfig,
        {
            "kind": partial(as_enum, enum_type=ModelKind),
            "dim": as_int,
            "layer_dims": _as_dims,
            "activation": partial(as_enum, enum_type=Activation),
            "loss": partial(as_enum, enum_type=LossKind),
            "pad_to_shards": as_bool,
        },
    ),
    "data": (
        DataConfig,
        {
            "kind": partial(as_enum, enum_type=DatasetKind),
            "size": as_int,
            "noise": as_float,
            "num_classes": as_int,
            "separation": as_float,
            "input_dim": as_int,
            "output_dim": as_int,
        },
    ),
    "optimizer": (
        OptimizerConfig,
        {
            "kind": partial(as_enum, enum_type=OptimizerKind),
            "learning_rate": as_float,
            "momentum_decay": as_float,
            "adam_beta1": as_float,
            "adam_beta2": as_float,
            "adam_eps": as_float,
            "weight_decay": as_float,
        },
    ),
    "replicator": (
        ReplicatorConfig,
        {
            "scheme": partial(as_enum, enum_type=Scheme),
            "compression": as_fraction,
            "chunk_size": as_int,
            "top_k": _optional(as_int),
            "sign": as_bool,
            "sign_domain": partial(as_enum, enum_type=SignDomain),
            "transfer_dtype": partial(as_enum, enum_type=TransferDtype),
            "seed": as_int,
        },
    ),
    "link": (
        LinkConfig,
        {
            "intra_node_mbps": as_float,
            "inter_node_mbps": as_float,
            "compute_time_s": as_float,
        },
    ),
    "output": (
        OutputConfig,
        {
            "out_dir": as_path,
            "metrics_file": as_str,
            "summary_file": as_str,
            "traffic_file": as_str,
            "traffic_summary_file": as_str,
        },
    ),
}

_SCALARS: Final[Coercers] = {
    "steps": as_int,
    "batch_size": as_int,
    "eval_every": as_int,
    "warmup_fraction": as_float,
    "seed": as_int,
}


def _build_section(name: str, section_type: type, coercers: Coercers, raw: Any, problems: list[str]) -> Any:
    if raw is None:
        return section_type()
    if not isinstance(raw, Mapping):
        problems.append(f"{name} must be a mapping, got {type(raw).__name__}")
        return section_type()
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in coercers:
            problems.append(f"Unknown key: {name}.{key}")
            continue
        try:
            values[key] = coercers[key](value)
        except ValueError as e:
            problems.append(f"{name}.{key}: {e}")
    return section_type(**values)


def _infer_data(model: ModelConfig, data: DataConfig, given: Mapping[str, Any]) -> DataConfig:
    # Data settings left out of the file follow the model.
    inferred: dict[str, Any] = {}
    if model.kind is ModelKind.QUADRATIC:
        inferred = {"kind": DatasetKind.QUADRATIC_TARGET, "input_dim": model.dim}
    elif len(model.layer_dims) >= 2:
        inferred["input_dim"] = model.layer_dims[0]
        if model.loss is LossKind.CROSS_ENTROPY:
            inferred.update(kind=DatasetKind.GAUSSIAN_BLOBS, num_classes=model.layer_dims[-1])
        else:
            inferred.update(kind=DatasetKind.LINEAR_REGRESSION, output_dim=model.layer_dims[-1])
    return replace(data, **{key: value for key, value in inferred.items() if key not in given})


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    return value


def set_nested(data: dict[str, Any], key: str, value: Any) -> None:
    """
    Sets ``value`` at the dotted ``key`` path of a nested mapping, creating missing levels.

    :raises ConfigError: If a non-final level of the path is not a mapping.
    """
    parts: list[str] = key.split(".")
    current: dict[str, Any] = data
    for part in parts[:-1]:
        nested: Any = current.setdefault(part, {})
        if not isinstance(nested, dict):
            raise ConfigError(f"Cannot set {key}: {part} is not a mapping")
        current = nested
    current[parts[-1]] = value


def flatten_keys(data: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flattens nested mappings into dotted keys: ``{"a": {"b": 1}}`` becomes ``{"a.b": 1}``."""
    flat: dict[str, Any] = {}
    for key, value in data.items():
        dotted: str = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_keys(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def read_yaml_mapping(path: Path) -> dict[str, Any]:
    """Reads a YAML file whose root is a mapping."""
    try:
        with path.open("r", encoding="utf-8") as f:
            data: Any = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a mapping at the root of {path}, got {type(data).__name__}")
    return data


def load_config(path: Path, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """
    Loads, overrides and validates an experiment config.

    :param path: A YAML file whose nested keys are the `ExperimentConfig` field names.
    :param overrides: Dotted keys (``replicator.compression``) and values applied after loading.
    """
    data: dict[str, Any] = read_yaml_mapping(path)
    return config_from(data, overrides)


def config_from(data: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    merged: dict[str, Any] = copy.deepcopy(dict(data))
    for key, value in (overrides or {}).items():
        set_nested(merged, key, value)
    return ExperimentConfig.from_mapping(merged)
