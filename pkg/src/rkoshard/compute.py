# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Final

import numpy as np
import numpy.typing as npt

from rkoshard import ConfigError, Matrix, Vector


class ModelKind(Enum):
    QUADRATIC = "quadratic"
    MLP = "mlp"


class Activation(Enum):
    TANH = "tanh"
    RELU = "relu"


class LossKind(Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class Batch:
    """
    A batch of examples. ``inputs`` has one row per example. ``targets`` is a matrix for MSE,
    a vector of integer labels for cross-entropy, and ``None`` for the quadratic model
    (whose rows are the target points themselves).
    """

    inputs: Matrix
    targets: npt.NDArray | None = None

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ConfigError(f"Batch inputs must be a non-empty matrix, got shape {self.inputs.shape}")
        if self.targets is not None and self.targets.shape[0] != self.inputs.shape[0]:
            raise ConfigError(
                f"Batch has {self.inputs.shape[0]} input rows but {self.targets.shape[0]} target rows"
            )

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])

    def rows(self, index: npt.NDArray[np.int64]) -> Batch:
        """Returns the sub-batch made of the rows at ``index``."""
        return Batch(
            inputs=self.inputs[index],
            targets=None if self.targets is None else self.targets[index],
        )


def padded_size(count: int, multiple: int) -> int:
    """Rounds ``count`` up to the next multiple of ``multiple``."""
    if multiple < 1:
        raise ConfigError(f"Padding multiple must be >= 1, got {multiple}")
    return -(-count // multiple) * multiple


class Model(ABC):
    """
    A model over a flat parameter vector. The flat vector may carry trailing pad positions
    (``flat_size > param_count``); pad positions never influence the loss and always
    receive a zero gradient.
    """

    kind: ModelKind

    def __init__(self, param_count: int, input_dim: int, pad_multiple: int = 1) -> None:
        self.param_count: Final[int] = param_count
        self.input_dim: Final[int] = input_dim
        self.flat_size: Final[int] = padded_size(param_count, pad_multiple)

    @abstractmethod
    def _loss(self, params: Vector, batch: Batch) -> float: ...

    @abstractmethod
    def _gradient(self, params: Vector, batch: Batch) -> Vector: ...

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> Vector: ...

    def forward_loss(self, params: Vector, batch: Batch) -> float:
        """
        :returns: The mean loss over ``batch``.
        """
        self._check(params, batch)
        return self._loss(params[: self.param_count], batch)

    def backward(self, params: Vector, batch: Batch) -> Vector:
        """
        :returns: The gradient of `forward_loss` with respect to ``params``, laid out like ``params``.
        """
        self._check(params, batch)
        grad: Vector = np.zeros(self.flat_size, dtype=np.float64)
        grad[: self.param_count] = self._gradient(params[: self.param_count], batch)
        return grad

    def _check(self, params: Vector, batch: Batch) -> None:
        if params.shape != (self.flat_size,):
            raise ConfigError(f"Expected {self.flat_size} parameters, got shape {params.shape}")
        if batch.inputs.shape[1] != self.input_dim:
            raise ConfigError(f"Expected input width {self.input_dim}, got {batch.inputs.shape[1]}")

    def _padded(self, values: Vector) -> Vector:
        flat: Vector = np.zeros(self.flat_size, dtype=np.float64)
        flat[: self.param_count] = values
        return flat


class QuadraticModel(Model):
    """
    ``f(θ) = mean_b ½‖θ − x_b‖²`` where the batch rows ``x_b`` are target points.
    The gradient is exactly ``θ − mean_b x_b``.
    """

    kind = ModelKind.QUADRATIC

    def __init__(self, dim: int, pad_multiple: int = 1) -> None:
        if dim < 1:
            raise ConfigError(f"Quadratic dimension must be >= 1, got {dim}")
        super().__init__(param_count=dim, input_dim=dim, pad_multiple=pad_multiple)

    def _loss(self, params: Vector, batch: Batch) -> float:
        diff: Matrix = params[np.newaxis, :] - batch.inputs
        return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))

    def _gradient(self, params: Vector, batch: Batch) -> Vector:
        return params - np.mean(batch.inputs, axis=0)

    def init_params(self, rng: np.random.Generator) -> Vector:
        return np.zeros(self.flat_size, dtype=np.float64)


@dataclass(frozen=True)
class _Layer:
    fan_in: int
    fan_out: int
    weight_offset: int
    bias_offset: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bias_offset", self.weight_offset + self.fan_in * self.fan_out)

    @property
    def end(self) -> int:
        return self.bias_offset + self.fan_out

    def weight(self, params: Vector) -> Matrix:
        return params[self.weight_offset : self.bias_offset].reshape(self.fan_out, self.fan_in)

    def bias(self, params: Vector) -> Vector:
        return params[self.bias_offset : self.end]


class MlpModel(Model):
    """
    A fully connected network. Hidden layers apply ``activation``; the output layer is linear.
    Parameters are laid out layer by layer, each as a row-major ``(fan_out, fan_in)`` weight
    block followed by its bias.

    ``MSE`` is ``mean((y − t)²)`` over every output of every example; ``CROSS_ENTROPY`` is the
    mean negative log-softmax probability of the integer label.
    """

    kind = ModelKind.MLP

    def __init__(
        self,
        layer_dims: list[int],
        activation: Activation = Activation.TANH,
        loss: LossKind = LossKind.MSE,
        pad_multiple: int = 1,
    ) -> None:
        if len(layer_dims) < 2 or any(dim < 1 for dim in layer_dims):
            raise ConfigError(f"MLP layer_dims needs at least two positive sizes, got {layer_dims}")
        self.layer_dims: Final[tuple[int, ...]] = tuple(layer_dims)
        self.activation: Final[Activation] = activation
        self.loss: Final[LossKind] = loss

        layers: list[_Layer] = []
        offset: int = 0
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            layer: _Layer = _Layer(fan_in=fan_in, fan_out=fan_out, weight_offset=offset)
            layers.append(layer)
            offset = layer.end
        self._layers: Final[tuple[_Layer, ...]] = tuple(layers)
        super().__init__(param_count=offset, input_dim=layer_dims[0], pad_multiple=pad_multiple)

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def init_params(self, rng: np.random.Generator) -> Vector:
        values: Vector = np.empty(self.param_count, dtype=np.float64)
        for layer in self._layers:
            bound: float = 1.0 / np.sqrt(layer.fan_in)
            values[layer.weight_offset : layer.end] = rng.uniform(-bound, bound, size=layer.end - layer.weight_offset)
        return self._padded(values)

    def predict(self, params: Vector, inputs: Matrix) -> Matrix:
        """:returns: The network outputs (logits for cross-entropy) for ``inputs``."""
        activations: list[Matrix] = self._forward(params[: self.param_count], inputs)
        return activations[-1]

    def _forward(self, params: Vector, inputs: Matrix) -> list[Matrix]:
        # Keeps every layer's output; hidden entries are post-activation.
        outputs: list[Matrix] = [inputs]
        last: int = len(self._layers) - 1
        for index, layer in enumerate(self._layers):
            z: Matrix = outputs[-1] @ layer.weight(params).T + layer.bias(params)
            outputs.append(z if index == last else self._activate(z))
        return outputs

    def _activate(self, z: Matrix) -> Matrix:
        if self.activation is Activation.TANH:
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _activation_grad(self, activated: Matrix) -> Matrix:
        # Derivative expressed through the activation's output.
        if self.activation is Activation.TANH:
            return 1.0 - activated * activated
        return (activated > 0.0).astype(np.float64)

    def _loss(self, params: Vector, batch: Batch) -> float:
        outputs: Matrix = self._forward(params, batch.inputs)[-1]
        return self._loss_and_output_grad(outputs, batch)[0]

    def _gradient(self, params: Vector, batch: Batch) -> Vector:
        outputs: list[Matrix] = self._forward(params, batch.inputs)
        delta: Matrix = self._loss_and_output_grad(outputs[-1], batch)[1]

        grad: Vector = np.zeros(self.param_count, dtype=np.float64)
        for index in range(len(self._layers) - 1, -1, -1):
            layer: _Layer = self._layers[index]
            previous: Matrix = outputs[index]
            grad[layer.weight_offset : layer.bias_offset] = (delta.T @ previous).ravel()
            grad[layer.bias_offset : layer.end] = delta.sum(axis=0)
            if index > 0:
                delta = (delta @ layer.weight(params)) * self._activation_grad(previous)
        return grad

    def _loss_and_output_grad(self, outputs: Matrix, batch: Batch) -> tuple[float, Matrix]:
        if batch.targets is None:
            raise ConfigError("MLP batches need targets")
        size: int = outputs.shape[0]
        if self.loss is LossKind.MSE:
            targets: Matrix = batch.targets.reshape(size, -1).astype(np.float64)
            if targets.shape != outputs.shape:
                raise ConfigError(f"Expected targets of shape {outputs.shape}, got {targets.shape}")
            residual: Matrix = outputs - targets
            return float(np.mean(residual * residual)), 2.0 * residual / residual.size

        labels: npt.NDArray[np.int64] = batch.targets.astype(np.int64).ravel()
        if labels.min() < 0 or labels.max() >= self.output_dim:
            raise ConfigError(f"Labels must lie in [0, {self.output_dim}), got [{labels.min()}, {labels.max()}]")
        shifted: Matrix = outputs - outputs.max(axis=1, keepdims=True)
        log_norm: Vector = np.log(np.exp(shifted).sum(axis=1))
        log_probs: Matrix = shifted - log_norm[:, np.newaxis]
        rows: npt.NDArray[np.int64] = np.arange(size)
        loss: float = float(-np.mean(log_probs[rows, labels]))
        output_grad: Matrix = np.exp(log_probs)
        output_grad[rows, labels] -= 1.0
        return loss, output_grad / size


def finite_diff_gradient(model: Model, params: Vector, batch: Batch, h: float = 1e-5) -> Vector:
    """
    Central-difference estimate of ``model.backward``. Pad positions are left at zero.

    :param h: The step size; must be positive.
    """
    if not h > 0:
        raise ConfigError(f"Finite-difference step must be > 0, got {h}")
    estimate: Vector = np.zeros(model.flat_size, dtype=np.float64)
    shifted: Vector = params.astype(np.float64, copy=True)
    for i in range(model.param_count):
        original: float = float(shifted[i])
        shifted[i] = original + h
        upper: float = model.forward_loss(shifted, batch)
        shifted[i] = original - h
        lower: float = model.forward_loss(shifted, batch)
        shifted[i] = original
        estimate[i] = (upper - lower) / (2.0 * h)
    return estimate


def gradient_check(model: Model, params: Vector, batch: Batch, h: float = 1e-5, floor: float = 1e-12) -> float:
    """
    :returns: ``max_i |analytic_i − fd_i| / (|fd_i| + floor)``.
    """
    analytic: Vector = model.backward(params, batch)
    estimate: Vector = finite_diff_gradient(model, params, batch, h=h)
    return float(np.max(np.abs(analytic - estimate) / (np.abs(estimate) + floor)))
