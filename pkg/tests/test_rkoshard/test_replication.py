# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from dataclasses import replace
from fractions import Fraction
from unittest import TestCase

import numpy as np

from rkoshard import ProtocolError
from rkoshard.replication import (
    HEADER_SIZE,
    CompressedUpdate,
    DemoReplicator,
    DilocoReplicator,
    FullReplicator,
    RandomReplicator,
    ReplicatorConfig,
    Scheme,
    SignDomain,
    StridingReplicator,
    TransferDtype,
    decode_message,
    encode_message,
    narrow,
    transmit,
    wire_bytes,
)
from rkoshard.transform import extract_fast_components


def _vector(length: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(length)


class TestReplicatorConfig(TestCase):
    def test_demo_top_k_from_compression(self) -> None:
        sut: ReplicatorConfig = ReplicatorConfig(scheme=Scheme.DEMO, compression=Fraction(1, 16), chunk_size=32)
        self.assertEqual(2, sut.top_k)
        self.assertEqual(Fraction(1, 16), sut.compression)

    def test_demo_compression_from_top_k(self) -> None:
        sut: ReplicatorConfig = ReplicatorConfig(scheme=Scheme.DEMO, chunk_size=32, top_k=4)
        self.assertEqual(Fraction(1, 8), sut.compression)

    def test_period_and_count(self) -> None:
        sut: ReplicatorConfig = ReplicatorConfig(scheme=Scheme.STRIDING, compression=Fraction(1, 16))
        self.assertEqual(16, sut.period)
        self.assertEqual(64, sut.selected_count(1024))
        self.assertIsNone(sut.top_k)

    def test_valid(self) -> None:
        for scheme, compression in (
            (Scheme.DEMO, Fraction(1, 16)),
            (Scheme.RANDOM, Fraction(1, 16)),
            (Scheme.STRIDING, Fraction(1, 16)),
            (Scheme.DILOCO, Fraction(1, 4)),
            (Scheme.FULL, Fraction(1)),
        ):
            with self.subTest(scheme=scheme):
                self.assertEqual([], ReplicatorConfig(scheme=scheme, compression=compression).violations(64))

    def test_violations(self) -> None:
        cases = [
            (ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(0)), None, "compression must be in (0, 1]"),
            (ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(3, 2)), None, "compression must be in"),
            (ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1, 2)), None, "must be 1 for the full scheme"),
            (ReplicatorConfig(scheme=Scheme.DEMO, compression=Fraction(1, 64)), None, "replicator.top_k must be in"),
            (ReplicatorConfig(scheme=Scheme.DEMO, chunk_size=8, top_k=9), None, "compression must be in (0, 1]"),
            (ReplicatorConfig(scheme=Scheme.DEMO, chunk_size=0), None, "chunk_size must be >= 1"),
            (ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(1, 32)), 10, "selects no index"),
            (ReplicatorConfig(scheme=Scheme.STRIDING, compression=Fraction(1, 16)), 8, "longer than the shard"),
            (
                ReplicatorConfig(scheme=Scheme.RANDOM, sign=False, transfer_dtype=TransferDtype.TERNARY),
                None,
                "ternary requires replicator.sign",
            ),
            (
                ReplicatorConfig(
                    scheme=Scheme.DEMO,
                    compression=Fraction(1, 32),
                    sign_domain=SignDomain.PARAMETERS,
                    transfer_dtype=TransferDtype.TERNARY,
                ),
                None,
                "requires replicator.sign_domain coefficients",
            ),
            (ReplicatorConfig(scheme=Scheme.RANDOM, seed=-1), None, "unsigned 64-bit"),
            (ReplicatorConfig(scheme=Scheme.RANDOM, seed=2**64), None, "unsigned 64-bit"),
        ]
        for config, shard_len, message in cases:
            with self.subTest(message=message, config=config):
                problems = config.violations(shard_len)
                self.assertEqual(1, len(problems), problems)
                self.assertIn(message, problems[0])


class TestWireBytes(TestCase):
    def _update(self, n_values: int, n_indices: int, dtype: TransferDtype) -> CompressedUpdate:
        return CompressedUpdate(
            scheme=Scheme.DEMO,
            step=0,
            shard_id=0,
            length=n_values,
            values=np.zeros(n_values),
            transfer_dtype=dtype,
            freq_indices=np.zeros(n_indices, dtype=np.int64),
        )

    def test_formula(self) -> None:
        cases = [
            (64, 64, TransferDtype.FP32, 512),
            (64, 0, TransferDtype.FP32, 256),
            (64, 0, TransferDtype.FP64, 512),
            (64, 0, TransferDtype.FP16, 128),
            (5, 0, TransferDtype.TERNARY, 2),
            (5, 1, TransferDtype.TERNARY, 6),
            (0, 0, TransferDtype.FP32, 0),
        ]
        for n_values, n_indices, dtype, expected in cases:
            with self.subTest(n_values=n_values, n_indices=n_indices, dtype=dtype):
                update: CompressedUpdate = self._update(n_values, n_indices, dtype)
                self.assertEqual(expected, wire_bytes(update))
                self.assertEqual(expected, update.wire_bytes)

    def test_ratios_at_one_sixteenth(self) -> None:
        v = _vector(1024)
        random = RandomReplicator(ReplicatorConfig(scheme=Scheme.RANDOM)).select(v, 0, 0)[0]
        demo = DemoReplicator(ReplicatorConfig(scheme=Scheme.DEMO)).select(v, 0, 0)[0]
        full = FullReplicator(ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1))).select(v, 0, 0)[0]
        self.assertEqual(256, random.wire_bytes)
        self.assertEqual(512, demo.wire_bytes)
        self.assertEqual(4096, full.wire_bytes)
        self.assertEqual(2, demo.wire_bytes // random.wire_bytes)
        self.assertEqual(16, full.wire_bytes // random.wire_bytes)


class TestNarrow(TestCase):
    def test_narrow(self) -> None:
        values = np.array([0.1, 1.0 / 3.0, 65504.0])
        self.assertTrue(np.array_equal(values, narrow(values, TransferDtype.FP64)))
        self.assertEqual(np.float32(0.1), narrow(values, TransferDtype.FP32)[0])
        self.assertEqual(float(np.float16(1.0 / 3.0)), narrow(values, TransferDtype.FP16)[1])
        self.assertEqual(65504.0, narrow(values, TransferDtype.FP16)[2])
        self.assertEqual(np.float64, narrow(values, TransferDtype.FP16).dtype)


class TestFullReplicator(TestCase):
    def test_select_signed(self) -> None:
        sut: FullReplicator = FullReplicator(ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1)))
        v = np.array([0.5, -2.0, 0.0])
        update, local_q = sut.select(v, step=3, shard_id=1)
        self.assertEqual([1.0, -1.0, 0.0], update.values.tolist())
        self.assertEqual(v.tolist(), local_q.tolist())
        self.assertEqual((3, 1, 3), (update.step, update.shard_id, update.length))
        self.assertIsNone(update.positions)

    def test_merge_mean(self) -> None:
        sut: FullReplicator = FullReplicator(ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1), sign=False))
        first, _ = sut.select(np.array([2.0, 4.0]), 0, 0)
        second, _ = sut.select(np.array([4.0, 8.0]), 0, 0)
        self.assertEqual([3.0, 6.0], sut.merge([first, second]).tolist())

    def test_wrong_scheme(self) -> None:
        with self.assertRaises(ProtocolError):
            FullReplicator(ReplicatorConfig(scheme=Scheme.DEMO))


class TestMergeConsistency(TestCase):
    def setUp(self) -> None:
        self.sut: FullReplicator = FullReplicator(ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1)))
        self.update, _ = self.sut.select(np.ones(4), step=2, shard_id=0)

    def test_empty(self) -> None:
        with self.assertRaises(ProtocolError):
            self.sut.merge([])

    def test_disagreement(self) -> None:
        for other in (
            replace(self.update, step=3),
            replace(self.update, shard_id=1),
            replace(self.update, length=5, values=np.ones(5)),
            replace(self.update, scheme=Scheme.RANDOM),
            replace(self.update, synchronized=False),
        ):
            with self.subTest(other=other):
                with self.assertRaises(ProtocolError):
                    self.sut.merge([self.update, other])

    def test_local_step_needs_local(self) -> None:
        with self.assertRaises(ProtocolError):
            self.sut.merge([replace(self.update, synchronized=False)])


class TestDilocoReplicator(TestCase):
    def setUp(self) -> None:
        self.sut: DilocoReplicator = DilocoReplicator(
            ReplicatorConfig(scheme=Scheme.DILOCO, compression=Fraction(1, 4), sign=False)
        )

    def test_sync_steps(self) -> None:
        self.assertEqual([0, 4, 8], [step for step in range(10) if self.sut.is_sync_step(step)])

    def test_off_step_is_local(self) -> None:
        v = np.array([1.0, -2.0])
        update, local_q = self.sut.select(v, step=1, shard_id=0)
        self.assertFalse(update.synchronized)
        self.assertEqual(0, update.n_values)
        self.assertEqual(0, update.wire_bytes)
        self.assertEqual([0.0, 0.0], local_q.tolist())
        local = np.array([7.0, 8.0])
        merged = self.sut.merge([update, update], local)
        self.assertEqual([7.0, 8.0], merged.tolist())
        self.assertIsNot(local, merged)

    def test_sync_step(self) -> None:
        update, local_q = self.sut.select(np.array([1.0, -2.0]), step=4, shard_id=0)
        other, _ = self.sut.select(np.array([3.0, 2.0]), step=4, shard_id=0)
        self.assertTrue(update.synchronized)
        self.assertEqual([1.0, -2.0], local_q.tolist())
        self.assertEqual([2.0, 0.0], self.sut.merge([update, other]).tolist())


class TestRandomReplicator(TestCase):
    def test_positions_are_seeded(self) -> None:
        config: ReplicatorConfig = ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(1, 8), seed=11)
        first = RandomReplicator(config).positions(5, 1, 64)
        second = RandomReplicator(config).positions(5, 1, 64)
        self.assertTrue(np.array_equal(first, second))
        self.assertEqual(8, len(first))
        self.assertEqual(8, len(set(first.tolist())))
        self.assertEqual(sorted(first.tolist()), first.tolist())
        self.assertTrue(np.all((first >= 0) & (first < 64)))

    def test_positions_vary(self) -> None:
        sut: RandomReplicator = RandomReplicator(ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(1, 8)))
        by_step = {tuple(sut.positions(step, 0, 64).tolist()) for step in range(20)}
        by_shard = {tuple(sut.positions(0, shard, 64).tolist()) for shard in range(20)}
        self.assertGreater(len(by_step), 1)
        self.assertGreater(len(by_shard), 1)
        other = RandomReplicator(ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(1, 8), seed=1))
        self.assertFalse(np.array_equal(sut.positions(0, 0, 64), other.positions(0, 0, 64)))

    def test_select_and_merge(self) -> None:
        sut: RandomReplicator = RandomReplicator(
            ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(1, 4), sign=False)
        )
        v = _vector(16)
        update, local_q = sut.select(v, 0, 0)
        positions = sut.positions(0, 0, 16)
        self.assertEqual(0, update.n_indices)
        self.assertTrue(np.array_equal(positions, update.positions))
        self.assertTrue(np.array_equal(v[positions], update.values))
        expected = np.zeros(16)
        expected[positions] = v[positions]
        self.assertTrue(np.array_equal(expected, local_q))
        other, _ = sut.select(-3.0 * v, 0, 0)
        self.assertTrue(np.allclose(-expected, sut.merge([update, other])))

    def test_mismatched_positions(self) -> None:
        sut: RandomReplicator = RandomReplicator(ReplicatorConfig(scheme=Scheme.RANDOM, compression=Fraction(1, 4)))
        update, _ = sut.select(_vector(16), 0, 0)
        with self.assertRaises(ProtocolError):
            sut.merge([update, replace(update, positions=update.positions[::-1].copy())])
        with self.assertRaises(ProtocolError):
            sut.merge([replace(update, positions=None)])


class TestStridingReplicator(TestCase):
    def test_positions(self) -> None:
        sut: StridingReplicator = StridingReplicator(
            ReplicatorConfig(scheme=Scheme.STRIDING, compression=Fraction(1, 4))
        )
        self.assertEqual([0, 4, 8], sut.positions(0, 0, 10).tolist())
        self.assertEqual([3, 7], sut.positions(3, 0, 10).tolist())
        self.assertEqual([1, 5, 9], sut.positions(5, 2, 10).tolist())

    def test_every_index_covered_once_per_period(self) -> None:
        sut: StridingReplicator = StridingReplicator(
            ReplicatorConfig(scheme=Scheme.STRIDING, compression=Fraction(1, 4))
        )
        seen = np.concatenate([sut.positions(step, 0, 12) for step in range(4)])
        self.assertEqual(list(range(12)), sorted(seen.tolist()))


class TestDemoReplicator(TestCase):
    def _config(self, **kwargs) -> ReplicatorConfig:
        values = dict(scheme=Scheme.DEMO, chunk_size=8, top_k=2, sign=False, transfer_dtype=TransferDtype.FP64)
        values.update(kwargs)
        return ReplicatorConfig(**values)

    def test_select(self) -> None:
        sut: DemoReplicator = DemoReplicator(self._config())
        v = _vector(20)
        update, q = sut.select(v, 0, 0)
        selection, expected_q, _ = extract_fast_components(v, 8, 2)
        self.assertTrue(np.array_equal(expected_q, q))
        self.assertEqual(6, update.n_values)
        self.assertEqual(6, update.n_indices)
        self.assertEqual(selection.indices.ravel().tolist(), update.freq_indices.tolist())
        self.assertEqual(8, update.chunk_size)

    def test_merge_single_is_q(self) -> None:
        sut: DemoReplicator = DemoReplicator(self._config())
        v = _vector(20)
        update, q = sut.select(v, 0, 0)
        self.assertTrue(np.allclose(q, sut.merge([update]), atol=1e-12))

    def test_merge_is_mean_of_q(self) -> None:
        sut: DemoReplicator = DemoReplicator(self._config())
        updates, qs = zip(*(sut.select(_vector(20, seed), 0, 0) for seed in range(3)))
        self.assertTrue(np.allclose(sum(qs) / 3, sut.merge(list(updates)), atol=1e-12))

    def test_signed_coefficients(self) -> None:
        sut: DemoReplicator = DemoReplicator(self._config(sign=True))
        update, _ = sut.select(_vector(16), 0, 0)
        self.assertTrue(set(np.abs(update.values).tolist()) <= {1.0})

    def test_sign_in_parameter_domain(self) -> None:
        sut: DemoReplicator = DemoReplicator(self._config(sign=True, sign_domain=SignDomain.PARAMETERS))
        v = _vector(16)
        update, q = sut.select(v, 0, 0)
        self.assertFalse(set(np.abs(update.values).tolist()) <= {1.0})
        merged = sut.merge([update])
        self.assertTrue(set(np.abs(merged).tolist()) <= {0.0, 1.0})
        self.assertTrue(np.array_equal(np.sign(q)[np.abs(q) > 1e-9], merged[np.abs(q) > 1e-9]))

    def test_chunk_size_mismatch(self) -> None:
        sut: DemoReplicator = DemoReplicator(self._config())
        update, _ = sut.select(_vector(16), 0, 0)
        with self.assertRaises(ProtocolError):
            sut.merge([update, replace(update, chunk_size=4)])


class TestCodec(TestCase):
    def test_header_size(self) -> None:
        self.assertEqual(27, HEADER_SIZE)

    def test_payload_matches_wire_bytes(self) -> None:
        v = _vector(50)
        for scheme, compression in ((Scheme.DEMO, Fraction(1, 4)), (Scheme.RANDOM, Fraction(1, 8))):
            for dtype in TransferDtype:
                with self.subTest(scheme=scheme, dtype=dtype):
                    config = ReplicatorConfig(
                        scheme=scheme, compression=compression, chunk_size=8, transfer_dtype=dtype, sign=True
                    )
                    replicator = DemoReplicator(config) if scheme is Scheme.DEMO else RandomReplicator(config)
                    update, _ = replicator.select(v, 4, 2)
                    message: bytes = encode_message(update)
                    self.assertEqual(HEADER_SIZE + update.wire_bytes, len(message))
                    decoded = decode_message(message, replicator)
                    self.assertEqual(update.values.tolist(), decoded.values.tolist())
                    self.assertEqual(update.freq_indices.tolist(), decoded.freq_indices.tolist())
                    self.assertEqual((4, 2, 50), (decoded.step, decoded.shard_id, decoded.length))
                    if scheme is Scheme.RANDOM:
                        assert decoded.positions is not None
                        self.assertTrue(np.array_equal(update.positions, decoded.positions))

    def test_ternary_packing(self) -> None:
        update: CompressedUpdate = CompressedUpdate(
            scheme=Scheme.FULL,
            step=0,
            shard_id=0,
            length=5,
            values=np.array([1.0, -1.0, 0.0, 1.0, -1.0]),
            transfer_dtype=TransferDtype.TERNARY,
        )
        message: bytes = encode_message(update)
        self.assertEqual(b"\x49\x02", message[HEADER_SIZE:])

    def test_ternary_rejects_magnitudes(self) -> None:
        update: CompressedUpdate = CompressedUpdate(
            scheme=Scheme.FULL,
            step=0,
            shard_id=0,
            length=1,
            values=np.array([0.5]),
            transfer_dtype=TransferDtype.TERNARY,
        )
        with self.assertRaises(ProtocolError):
            encode_message(update)

    def test_malformed(self) -> None:
        replicator = FullReplicator(ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1)))
        update, _ = replicator.select(np.ones(4), 0, 0)
        message: bytes = encode_message(update)
        with self.assertRaises(ProtocolError):
            decode_message(message[:10], replicator)
        with self.assertRaises(ProtocolError):
            decode_message(message + b"\x00", replicator)
        ternary: bytes = encode_message(replace(update, transfer_dtype=TransferDtype.TERNARY))
        with self.assertRaises(ProtocolError):
            decode_message(ternary[:-1] + b"\xff", replicator)

    def test_unsynchronized(self) -> None:
        replicator = DilocoReplicator(ReplicatorConfig(scheme=Scheme.DILOCO, compression=Fraction(1, 2)))
        update, _ = replicator.select(np.ones(4), 1, 0)
        decoded, size = transmit(update, replicator)
        self.assertFalse(decoded.synchronized)
        self.assertEqual(0, size)

    def test_transmit_narrows(self) -> None:
        replicator = FullReplicator(
            ReplicatorConfig(scheme=Scheme.FULL, compression=Fraction(1), sign=False, transfer_dtype=TransferDtype.FP16)
        )
        update, _ = replicator.select(np.array([1.0 / 3.0, 0.1]), 0, 0)
        decoded, size = transmit(update, replicator)
        self.assertEqual(4, size)
        self.assertEqual(narrow(update.values, TransferDtype.FP16).tolist(), decoded.values.tolist())
