# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Final, Sequence

import numpy as np
import numpy.typing as npt

from rkoshard import ProtocolError, Vector
from rkoshard.transform import (
    ChunkLayout,
    FreqSelection,
    extract_fast_components,
    idct3_rows,
    sign_transform,
    unchunk,
)

INDEX_BITS: Final[int] = 32
"""Width of a transmitted DeMo frequency index."""

MAX_SEED: Final[int] = 2**64


class Scheme(Enum):
    DEMO = "demo"
    RANDOM = "random"
    STRIDING = "striding"
    DILOCO = "diloco"
    FULL = "full"


class TransferDtype(Enum):
    FP64 = "fp64"
    FP32 = "fp32"
    FP16 = "fp16"
    TERNARY = "ternary"

    @property
    def value_bits(self) -> int:
        return _VALUE_BITS[self]


_VALUE_BITS: Final[dict[TransferDtype, int]] = {
    TransferDtype.FP64: 64,
    TransferDtype.FP32: 32,
    TransferDtype.FP16: 16,
    TransferDtype.TERNARY: 2,
}


class SignDomain(Enum):
    COEFFICIENTS = "coefficients"
    PARAMETERS = "parameters"


@dataclass(frozen=True)
class ReplicatorConfig:
    """
    How the inter-node synchronize step selects and encodes components.

    For DeMo, ``compression`` is always ``top_k / chunk_size``: when ``top_k`` is given the
    compression is derived from it, otherwise ``top_k = round(compression × chunk_size)``.
    For Striding and DiLoCo the period is ``round(1 / compression)``.
    """

    scheme: Scheme = Scheme.DEMO
    compression: Fraction = Fraction(1, 16)
    chunk_size: int = 32
    top_k: int | None = None
    sign: bool = True
    sign_domain: SignDomain = SignDomain.COEFFICIENTS
    transfer_dtype: TransferDtype = TransferDtype.FP32
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "compression", Fraction(self.compression))
        if self.scheme is Scheme.DEMO and self.chunk_size >= 1:
            if self.top_k is None:
                object.__setattr__(self, "top_k", round(self.compression * self.chunk_size))
            else:
                object.__setattr__(self, "compression", Fraction(self.top_k, self.chunk_size))

    @property
    def period(self) -> int:
        """:returns: The stride (Striding) or the sync period (DiLoCo)."""
        if self.compression <= 0:
            return 0
        return round(1 / self.compression)

    def selected_count(self, shard_len: int) -> int:
        """:returns: The number of indices Random replication selects from a shard."""
        return round(self.compression * shard_len)

    def violations(self, shard_len: int | None = None) -> list[str]:
        """
        :param shard_len: The length of the vectors this config will replicate, if known.
        :returns: Every constraint this config violates.
        """
        problems: list[str] = []
        if not 0 < self.compression <= 1:
            problems.append(f"replicator.compression must be in (0, 1], got {self.compression}")
            return problems

        if self.scheme is Scheme.FULL and self.compression != 1:
            problems.append(f"replicator.compression must be 1 for the full scheme, got {self.compression}")
        elif self.scheme is Scheme.DEMO:
            if self.chunk_size < 1:
                problems.append(f"replicator.chunk_size must be >= 1, got {self.chunk_size}")
            elif self.top_k is None or not 1 <= self.top_k <= self.chunk_size:
                problems.append(
                    f"replicator.top_k must be in [1, chunk_size={self.chunk_size}], got {self.top_k} "
                    f"(compression {self.compression})"
                )
        elif self.scheme is Scheme.RANDOM and shard_len is not None and self.selected_count(shard_len) < 1:
            problems.append(
                f"replicator.compression {self.compression} selects no index from a shard of length {shard_len}"
            )
        elif self.scheme is Scheme.STRIDING and shard_len is not None and self.period > shard_len:
            problems.append(
                f"replicator.compression {self.compression} gives a stride of {self.period}, "
                f"longer than the shard length {shard_len}"
            )

        if self.transfer_dtype is TransferDtype.TERNARY and not self.sign:
            problems.append("replicator.transfer_dtype ternary requires replicator.sign")
        elif (
            self.transfer_dtype is TransferDtype.TERNARY
            and self.scheme is Scheme.DEMO
            and self.sign_domain is SignDomain.PARAMETERS
        ):
            problems.append(
                "replicator.transfer_dtype ternary requires replicator.sign_domain coefficients for the demo scheme"
            )
        if not 0 <= self.seed < MAX_SEED:
            problems.append(f"replicator.seed must be an unsigned 64-bit value, got {self.seed}")
        return problems


@dataclass(frozen=True)
class CompressedUpdate:
    """
    One replica's contribution to a synchronize step.

    ``values`` are the transmitted values. ``freq_indices`` (DeMo only) are transmitted with them.
    ``positions`` (Random and Striding) are implied by the shared seed and never transmitted.
    A DiLoCo update on a non-sync step has ``synchronized=False`` and carries nothing.
    """

    scheme: Scheme
    step: int
    shard_id: int
    length: int
    values: Vector
    transfer_dtype: TransferDtype
    freq_indices: npt.NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    positions: npt.NDArray[np.int64] | None = None
    chunk_size: int = 0
    synchronized: bool = True

    @property
    def n_values(self) -> int:
        return int(self.values.size)

    @property
    def n_indices(self) -> int:
        return int(self.freq_indices.size)

    @property
    def wire_bytes(self) -> int:
        return wire_bytes(self)


def wire_bytes(update: CompressedUpdate) -> int:
    """
    :returns: ``ceil((n_values × value_bits + n_indices × 32) / 8)``, the payload size of ``update``.
    """
    bits: int = update.n_values * update.transfer_dtype.value_bits + update.n_indices * INDEX_BITS
    return -(-bits // 8)


def narrow(values: Vector, dtype: TransferDtype) -> Vector:
    """Rounds ``values`` to the precision of ``dtype`` (round-to-nearest-even) and widens back."""
    if dtype is TransferDtype.FP32:
        return values.astype(np.float32).astype(np.float64)
    if dtype is TransferDtype.FP16:
        return values.astype(np.float16).astype(np.float64)
    return values.astype(np.float64, copy=True)


class Replicator(ABC):
    """Selects, encodes and merges the components exchanged within a replication group."""

    scheme: Scheme

    def __init__(self, config: ReplicatorConfig) -> None:
        if config.scheme is not self.scheme:
            raise ProtocolError(f"{type(self).__name__} cannot run scheme {config.scheme.value}")
        self.config: Final[ReplicatorConfig] = config

    @abstractmethod
    def select(self, v: Vector, step: int, shard_id: int) -> tuple[CompressedUpdate, Vector]:
        """
        Chooses the components of ``v`` to offer for synchronization.

        :returns: The update to transmit and ``local_q``, the unsigned components it was built from.
        """

    @abstractmethod
    def _merge(self, updates: Sequence[CompressedUpdate]) -> Vector: ...

    def positions(self, step: int, shard_id: int, length: int) -> npt.NDArray[np.int64] | None:
        """:returns: The implied positions for an update, or ``None`` if the scheme transmits its own."""
        return None

    def merge(self, updates: Sequence[CompressedUpdate], local: Vector | None = None) -> Vector:
        """
        Element-wise mean of every replica's transmitted components; positions nobody
        transmitted are zero.

        :param updates: One update per member of the replication group, in rank order.
        :param local: The vector returned when no member synchronized (DiLoCo off-steps).
        """
        self._check_consistent(updates)
        if not updates[0].synchronized:
            if local is None:
                raise ProtocolError("A purely local step needs the local vector")
            return local.astype(np.float64, copy=True)
        return self._merge(updates)

    def _check_consistent(self, updates: Sequence[CompressedUpdate]) -> None:
        if not updates:
            raise ProtocolError("Cannot merge an empty group")
        first: CompressedUpdate = updates[0]
        for update in updates:
            if update.scheme is not self.scheme:
                raise ProtocolError(f"Expected scheme {self.scheme.value}, got {update.scheme.value}")
            if (update.step, update.length, update.shard_id) != (first.step, first.length, first.shard_id):
                raise ProtocolError(
                    f"Updates disagree: step/length/shard {update.step}/{update.length}/{update.shard_id} "
                    f"vs {first.step}/{first.length}/{first.shard_id}"
                )
            if update.synchronized != first.synchronized:
                raise ProtocolError(f"Replicas disagree on whether step {first.step} synchronizes")

    def _signed(self, values: Vector) -> Vector:
        return sign_transform(values) if self.config.sign else values.astype(np.float64, copy=True)

    @staticmethod
    def _mean(rows: Sequence[Vector]) -> Vector:
        # Fixed rank-order accumulation.
        total: Vector = np.zeros_like(rows[0], dtype=np.float64)
        for row in rows:
            total = total + row
        return total / len(rows)


class FullReplicator(Replicator):
    scheme = Scheme.FULL

    def select(self, v: Vector, step: int, shard_id: int) -> tuple[CompressedUpdate, Vector]:
        update: CompressedUpdate = CompressedUpdate(
            scheme=self.scheme,
            step=step,
            shard_id=shard_id,
            length=len(v),
            values=self._signed(v),
            transfer_dtype=self.config.transfer_dtype,
        )
        return update, v.astype(np.float64, copy=True)

    def _merge(self, updates: Sequence[CompressedUpdate]) -> Vector:
        return self._mean([update.values for update in updates])


class DilocoReplicator(Replicator):
    """Synchronizes the whole vector every ``period``-th step and nothing in between."""

    scheme = Scheme.DILOCO

    def is_sync_step(self, step: int) -> bool:
        return step % self.config.period == 0

    def select(self, v: Vector, step: int, shard_id: int) -> tuple[CompressedUpdate, Vector]:
        synchronized: bool = self.is_sync_step(step)
        update: CompressedUpdate = CompressedUpdate(
            scheme=self.scheme,
            step=step,
            shard_id=shard_id,
            length=len(v),
            values=self._signed(v) if synchronized else np.zeros(0, dtype=np.float64),
            transfer_dtype=self.config.transfer_dtype,
            synchronized=synchronized,
        )
        local_q: Vector = v.astype(np.float64, copy=True) if synchronized else np.zeros(len(v), dtype=np.float64)
        return update, local_q

    def _merge(self, updates: Sequence[CompressedUpdate]) -> Vector:
        return self._mean([update.values for update in updates])


class IndexReplicator(Replicator):
    """Base for schemes whose positions every replica can compute locally."""

    @abstractmethod
    def positions(self, step: int, shard_id: int, length: int) -> npt.NDArray[np.int64]: ...

    def select(self, v: Vector, step: int, shard_id: int) -> tuple[CompressedUpdate, Vector]:
        positions: npt.NDArray[np.int64] = self.positions(step, shard_id, len(v))
        local_q: Vector = np.zeros(len(v), dtype=np.float64)
        local_q[positions] = v[positions]
        update: CompressedUpdate = CompressedUpdate(
            scheme=self.scheme,
            step=step,
            shard_id=shard_id,
            length=len(v),
            values=self._signed(v[positions]),
            transfer_dtype=self.config.transfer_dtype,
            positions=positions,
        )
        return update, local_q

    def _merge(self, updates: Sequence[CompressedUpdate]) -> Vector:
        positions: npt.NDArray[np.int64] | None = updates[0].positions
        if positions is None:
            raise ProtocolError(f"{self.scheme.value} update without positions")
        for update in updates[1:]:
            if update.positions is None or not np.array_equal(update.positions, positions):
                raise ProtocolError(f"Replicas selected different indices at step {update.step}")
        merged: Vector = np.zeros(updates[0].length, dtype=np.float64)
        merged[positions] = self._mean([update.values for update in updates])
        return merged


class RandomReplicator(IndexReplicator):
    """
    Selects ``round(compression × length)`` distinct indices from a generator seeded by
    ``(seed, step, shard_id)``, so every replica draws the same set without exchanging it.
    """

    scheme = Scheme.RANDOM

    def positions(self, step: int, shard_id: int, length: int) -> npt.NDArray[np.int64]:
        rng: np.random.Generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.config.seed, step, shard_id]))
        )
        count: int = self.config.selected_count(length)
        return np.sort(rng.permutation(length)[:count]).astype(np.int64)


class StridingReplicator(IndexReplicator):
    """Selects every ``period``-th index, starting at ``step mod period``."""

    scheme = Scheme.STRIDING

    def positions(self, step: int, shard_id: int, length: int) -> npt.NDArray[np.int64]:
        period: int = self.config.period
        return np.arange(step % period, length, period, dtype=np.int64)


class DemoReplicator(Replicator):
    """
    Transmits the top-k DCT-II coefficients of every chunk together with their frequency
    indices, and merges them in the frequency domain before the inverse transform.
    """

    scheme = Scheme.DEMO

    def select(self, v: Vector, step: int, shard_id: int) -> tuple[CompressedUpdate, Vector]:
        assert self.config.top_k is not None
        selection: FreqSelection
        q: Vector
        selection, q, _ = extract_fast_components(v, self.config.chunk_size, self.config.top_k)
        values: Vector = selection.coefficients.ravel()
        if self.config.sign_domain is SignDomain.COEFFICIENTS:
            values = self._signed(values)
        update: CompressedUpdate = CompressedUpdate(
            scheme=self.scheme,
            step=step,
            shard_id=shard_id,
            length=len(v),
            values=values.astype(np.float64, copy=True),
            transfer_dtype=self.config.transfer_dtype,
            freq_indices=selection.indices.ravel().astype(np.int64),
            chunk_size=self.config.chunk_size,
        )
        return update, q

    def _merge(self, updates: Sequence[CompressedUpdate]) -> Vector:
        layout: ChunkLayout = ChunkLayout.for_length(updates[0].length, updates[0].chunk_size)
        dense: list[Vector] = []
        for update in updates:
            if update.chunk_size != layout.chunk_size:
                raise ProtocolError(f"Replicas disagree on chunk size: {update.chunk_size} vs {layout.chunk_size}")
            indices: npt.NDArray[np.int64] = update.freq_indices.reshape(layout.num_chunks, -1)
            coefficients: Vector = np.zeros((layout.num_chunks, layout.chunk_size), dtype=np.float64)
            np.put_along_axis(coefficients, indices, update.values.reshape(indices.shape), axis=1)
            dense.append(coefficients)
        merged: Vector = unchunk(idct3_rows(self._mean(dense)), layout)
        if self.config.sign and self.config.sign_domain is SignDomain.PARAMETERS:
            merged = sign_transform(merged)
        return merged


# Wire layout, little-endian:
# scheme tag, dtype tag, flags (bit 0: synchronized), step, shard id, length, chunk size,
# value count, index count, then the values and the uint32 frequency indices.
HEADER: Final[struct.Struct] = struct.Struct("<BBBIIIIII")
HEADER_SIZE: Final[int] = HEADER.size

_SCHEME_TAGS: Final[list[Scheme]] = list(Scheme)
_DTYPE_TAGS: Final[list[TransferDtype]] = list(TransferDtype)
_NUMPY_DTYPES: Final[dict[TransferDtype, str]] = {
    TransferDtype.FP64: "<f8",
    TransferDtype.FP32: "<f4",
    TransferDtype.FP16: "<f2",
}


def _pack_ternary(values: Vector) -> bytes:
    codes: npt.NDArray[np.uint8] = np.zeros(-(-values.size // 4) * 4, dtype=np.uint8)
    codes[: values.size][values > 0] = 1
    codes[: values.size][values < 0] = 2
    quads: npt.NDArray[np.uint8] = codes.reshape(-1, 4)
    packed: npt.NDArray[np.uint8] = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def _unpack_ternary(data: bytes, count: int) -> Vector:
    packed: npt.NDArray[np.uint8] = np.frombuffer(data, dtype=np.uint8)
    codes: npt.NDArray[np.uint8] = np.stack([(packed >> shift) & 0b11 for shift in (0, 2, 4, 6)], axis=1).ravel()
    codes = codes[:count]
    if np.any(codes == 3):
        raise ProtocolError("Invalid ternary code 3 in payload")
    return np.where(codes == 1, 1.0, np.where(codes == 2, -1.0, 0.0))


def encode_message(update: CompressedUpdate) -> bytes:
    """
    Serializes ``update``. The payload after the fixed header is exactly `wire_bytes` long.
    """
    if update.transfer_dtype is TransferDtype.TERNARY:
        if not np.all(np.isin(update.values, (-1.0, 0.0, 1.0))):
            raise ProtocolError("Ternary transfer needs values in {-1, 0, 1}")
        values: bytes = _pack_ternary(update.values)
    else:
        values = update.values.astype(_NUMPY_DTYPES[update.transfer_dtype]).tobytes()
    header: bytes = HEADER.pack(
        _SCHEME_TAGS.index(update.scheme),
        _DTYPE_TAGS.index(update.transfer_dtype),
        1 if update.synchronized else 0,
        update.step,
        update.shard_id,
        update.length,
        update.chunk_size,
        update.n_values,
        update.n_indices,
    )
    return header + values + update.freq_indices.astype("<u4").tobytes()


def decode_message(data: bytes, replicator: Replicator) -> CompressedUpdate:
    """
    Deserializes a message produced by `encode_message`; implied positions are recomputed by
    ``replicator``.
    """
    if len(data) < HEADER_SIZE:
        raise ProtocolError(f"Message of {len(data)} bytes is shorter than the header")
    scheme_tag, dtype_tag, flags, step, shard_id, length, chunk_size, n_values, n_indices = HEADER.unpack_from(data)
    scheme: Scheme = _SCHEME_TAGS[scheme_tag]
    dtype: TransferDtype = _DTYPE_TAGS[dtype_tag]
    value_bytes: int = -(-n_values * dtype.value_bits // 8)
    expected: int = HEADER_SIZE + value_bytes + n_indices * INDEX_BITS // 8
    if len(data) != expected:
        raise ProtocolError(f"Message length {len(data)} does not match its header ({expected})")

    body: bytes = data[HEADER_SIZE : HEADER_SIZE + value_bytes]
    values: Vector
    if dtype is TransferDtype.TERNARY:
        values = _unpack_ternary(body, n_values)
    else:
        values = np.frombuffer(body, dtype=_NUMPY_DTYPES[dtype]).astype(np.float64)
    freq_indices: npt.NDArray[np.int64] = np.frombuffer(data[HEADER_SIZE + value_bytes :], dtype="<u4").astype(
        np.int64
    )
    synchronized: bool = bool(flags & 1)
    return CompressedUpdate(
        scheme=scheme,
        step=step,
        shard_id=shard_id,
        length=length,
        values=values,
        transfer_dtype=dtype,
        freq_indices=freq_indices,
        positions=replicator.positions(step, shard_id, length) if synchronized else None,
        chunk_size=chunk_size,
        synchronized=synchronized,
    )


def transmit(update: CompressedUpdate, replicator: Replicator) -> tuple[CompressedUpdate, int]:
    """
    Puts ``update`` on the wire: serializes and deserializes it.

    :returns: The update as every receiver sees it and its payload size in bytes.
    """
    message: bytes = encode_message(update)
    return decode_message(message, replicator), len(message) - HEADER_SIZE
