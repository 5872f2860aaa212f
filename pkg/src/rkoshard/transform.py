# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from rkoshard import ConfigError, Matrix, Vector


@dataclass(frozen=True)
class ChunkLayout:
    chunk_size: int
    num_chunks: int
    pad_len: int

    @property
    def length(self) -> int:
        """:returns: The length of the vector before padding."""
        return self.num_chunks * self.chunk_size - self.pad_len

    @classmethod
    def for_length(cls, length: int, chunk_size: int) -> ChunkLayout:
        if chunk_size < 1:
            raise ConfigError(f"Chunk size must be >= 1, got {chunk_size}")
        if length < 1:
            raise ConfigError(f"Cannot chunk a vector of length {length}")
        num_chunks: int = -(-length // chunk_size)
        return cls(chunk_size=chunk_size, num_chunks=num_chunks, pad_len=num_chunks * chunk_size - length)


def chunk(v: Vector, s: int) -> tuple[Matrix, ChunkLayout]:
    """
    Splits ``v`` into consecutive windows of length ``s``; the final window is zero-padded.

    :returns: A ``(num_chunks, s)`` matrix and its layout.
    """
    layout: ChunkLayout = ChunkLayout.for_length(len(v), s)
    padded: Vector = np.zeros(layout.num_chunks * s, dtype=np.float64)
    padded[: len(v)] = v
    return padded.reshape(layout.num_chunks, s), layout


def unchunk(chunks: Matrix, layout: ChunkLayout) -> Vector:
    """Inverse of `chunk`: flattens the rows and drops the pad."""
    return np.ascontiguousarray(chunks.reshape(-1)[: layout.length])


@lru_cache(maxsize=64)
def dct_matrix(s: int) -> Matrix:
    """
    The orthonormal DCT-II basis: ``C[j, i] = c_j cos(π (2i + 1) j / 2s)`` with ``c_0 = √(1/s)``
    and ``c_j = √(2/s)`` otherwise. ``C @ x`` is DCT-II and ``C.T @ X`` is its inverse (DCT-III).
    """
    if s < 1:
        raise ConfigError(f"DCT size must be >= 1, got {s}")
    i: Vector = np.arange(s, dtype=np.float64)
    j: Vector = np.arange(s, dtype=np.float64)
    basis: Matrix = np.cos(np.pi * np.outer(j, 2.0 * i + 1.0) / (2.0 * s))
    scale: Vector = np.full(s, np.sqrt(2.0 / s))
    scale[0] = np.sqrt(1.0 / s)
    basis *= scale[:, np.newaxis]
    basis.setflags(write=False)
    return basis


def dct2(x: Vector) -> Vector:
    return dct_matrix(len(x)) @ x


def idct3(coeffs: Vector) -> Vector:
    return dct_matrix(len(coeffs)).T @ coeffs


def dct2_rows(chunks: Matrix) -> Matrix:
    """Applies `dct2` to every row."""
    return chunks @ dct_matrix(chunks.shape[1]).T


def idct3_rows(coeffs: Matrix) -> Matrix:
    """Applies `idct3` to every row."""
    return coeffs @ dct_matrix(coeffs.shape[1])


@dataclass(frozen=True)
class FreqSelection:
    """
    The ``k`` selected frequencies of every chunk. ``indices`` is ``(num_chunks, k)``, ascending
    within a row; ``coefficients[c, j]`` is the coefficient at ``indices[c, j]``.
    """

    layout: ChunkLayout
    indices: npt.NDArray[np.int64]
    coefficients: Matrix

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])

    def dense(self, coefficients: Matrix | None = None) -> Matrix:
        """
        Scatters coefficients into a ``(num_chunks, chunk_size)`` matrix, zeros elsewhere.

        :param coefficients: Values to scatter instead of ``self.coefficients`` (same shape).
        """
        values: Matrix = self.coefficients if coefficients is None else coefficients
        dense: Matrix = np.zeros((self.layout.num_chunks, self.layout.chunk_size), dtype=np.float64)
        np.put_along_axis(dense, self.indices, values, axis=1)
        return dense


def top_k_indices(coeffs: Matrix, k: int) -> npt.NDArray[np.int64]:
    """
    Per row, the indices of the ``k`` largest ``|coefficient|`` values; on ties the lower index wins.

    :returns: A ``(rows, k)`` array, ascending within each row.
    """
    if not 1 <= k <= coeffs.shape[1]:
        raise ConfigError(f"top_k must satisfy 1 <= k <= chunk size ({coeffs.shape[1]}), got {k}")
    # A stable sort keeps equal magnitudes in index order.
    order: npt.NDArray[np.int64] = np.argsort(-np.abs(coeffs), axis=1, kind="stable")[:, :k]
    return np.sort(order, axis=1)


def extract_fast_components(m: Vector, s: int, k: int) -> tuple[FreqSelection, Vector, Vector]:
    """
    Extracts the fast-moving components of ``m``: per chunk of length ``s``, the ``k`` DCT-II
    coefficients of largest magnitude.

    :returns: ``(selection, q, m_next)`` where ``q`` is the inverse transform of the selected
     coefficients alone and ``m_next = m − q``.
    """
    if k > s:
        raise ConfigError(f"top_k ({k}) must not exceed chunk size ({s})")
    chunks: Matrix
    layout: ChunkLayout
    chunks, layout = chunk(m, s)
    coeffs: Matrix = dct2_rows(chunks)
    indices: npt.NDArray[np.int64] = top_k_indices(coeffs, k)
    selection: FreqSelection = FreqSelection(
        layout=layout,
        indices=indices,
        coefficients=np.take_along_axis(coeffs, indices, axis=1),
    )
    q: Vector = unchunk(idct3_rows(selection.dense()), layout)
    return selection, q, m - q


def sign_transform(values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Elementwise signum; exact zeros stay zero."""
    return np.sign(values).astype(np.float64)
