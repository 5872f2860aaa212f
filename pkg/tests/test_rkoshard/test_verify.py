# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from unittest import TestCase
from unittest.mock import MagicMock

import numpy as np

from rkoshard import Vector
from rkoshard.transform import dct2, idct3
from rkoshard.verify import Verifier, VerificationFailure, VerifyReport, verify


def scaled_dct(x: Vector) -> Vector:
    return dct2(x) * 1.01


class TestVerifier(TestCase):
    def test_all_checks_pass(self) -> None:
        status: MagicMock = MagicMock()
        report: VerifyReport = Verifier(status=status).run()

        self.assertEqual([], report.failed)
        self.assertTrue(report.ok)
        self.assertEqual(14, len(report.passed))
        sections: list[str] = [call.args[0] for call in status.start_section.call_args_list]
        self.assertEqual(["compute", "transform", "replication", "cluster", "optim", "harness"], sections)
        self.assertEqual(6, status.finish_section.call_count)
        self.assertEqual(14, status.finish_item.call_count)

    def test_broken_transform_is_caught(self) -> None:
        report: VerifyReport = verify(dct=scaled_dct, idct=idct3)

        self.assertFalse(report.ok)
        self.assertEqual(["DCT round trip", "Parseval"], [name for name, _ in report.failed])
        self.assertIn("s=1:", report.failed[0][1])
        self.assertEqual(12, len(report.passed))

    def test_broken_inverse_is_caught(self) -> None:
        sut: Verifier = Verifier(idct=lambda x: np.zeros_like(x))
        with self.assertRaises(VerificationFailure):
            sut.check_round_trip()
        self.assertIn("worst relative error", sut.check_parseval())

    def test_failures_are_reported(self) -> None:
        status: MagicMock = MagicMock()
        sut: Verifier = Verifier(status=status, dct=scaled_dct, idct=idct3)
        sut.run()
        errors = [call.kwargs["error"] for call in status.finish_item.call_args_list if "error" in call.kwargs]
        self.assertEqual(2, len(errors))
        self.assertTrue(all(isinstance(error, VerificationFailure) for error in errors))

    def test_seeded(self) -> None:
        self.assertEqual(Verifier(seed=3).check_gradients(), Verifier(seed=3).check_gradients())
        self.assertEqual(dct2, Verifier().dct)
