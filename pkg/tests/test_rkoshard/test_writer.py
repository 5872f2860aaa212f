# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from datetime import timedelta
from io import StringIO
from unittest import TestCase

from rkoshard import SimException
from rkoshard.writer import StatusWriter, TableEvent, format_duration


class TestFormatDuration(TestCase):
    def test_format(self) -> None:
        cases = [
            (timedelta(hours=1, minutes=2, seconds=3), "1h2m"),
            (timedelta(days=1), "24h0m"),
            (timedelta(minutes=3, seconds=4), "3m4s"),
            (timedelta(seconds=12, milliseconds=400), "12s"),
            (timedelta(seconds=1, milliseconds=500), "1.500s"),
            (timedelta(milliseconds=7), "0.007s"),
            (timedelta(), "0s"),
        ]
        for duration, expected in cases:
            with self.subTest(duration=duration):
                self.assertEqual(expected, format_duration(duration))


class TestTableEvent(TestCase):
    def test_write(self) -> None:
        stream: StringIO = StringIO()
        TableEvent([["axis", "loss"], ["1/16", "0.5"], ["1/32", "0.75"]]).write_event(stream)
        self.assertEqual(
            "| axis | loss |\n" "| ---- | ---- |\n" "| 1/16 | 0.5  |\n" "| 1/32 | 0.75 |\n\n",
            stream.getvalue(),
        )


class TestStatusWriter(TestCase):
    def setUp(self) -> None:
        self.stream: StringIO = StringIO()
        self.sut: StatusWriter = StatusWriter(self.stream, show_detail=False)

    def test_section_with_item(self) -> None:
        self.sut.start_section("verify", include_duration=False)
        self.sut.start_item("round trip")
        self.sut.finish_item("passed.")
        self.sut.info("all good")
        self.sut.finish_section()
        self.assertEqual(
            "# verify\n\n - round trip... passed.\n\nall good\n\n✅ Finished **verify**\n\n",
            self.stream.getvalue(),
        )

    def test_item_error(self) -> None:
        self.sut.start_section("sweep", include_duration=False)
        self.sut.start_item("compression=1/16")
        self.sut.finish_item(error="diverged")
        self.sut.finish_section()
        self.assertEqual(
            "# sweep\n\n - compression=1/16... ❌ diverged\n\n❌ Finished **sweep**\n❌ diverged\n\n",
            self.stream.getvalue(),
        )

    def test_item_errors(self) -> None:
        self.sut.start_item("check")
        self.sut.error("first")
        self.sut.error(ValueError("second"))
        self.sut.finish_item()
        self.assertEqual(" - check... ❌\n   - ❌ first\n   - ❌ second\n", self.stream.getvalue())

    def test_nested_sections(self) -> None:
        self.sut.start_section("outer", include_duration=False)
        self.sut.start_section("inner", include_duration=False)
        self.sut.finish_section()
        self.sut.finish_section()
        self.assertEqual(
            "# outer\n\n## inner\n\n✅ Finished **inner**\n\n✅ Finished **outer**\n\n",
            self.stream.getvalue(),
        )

    def test_finish_section_name(self) -> None:
        self.sut.start_section("run", include_duration=False)
        self.sut.finish_section("run config.yml")
        self.assertTrue(self.stream.getvalue().endswith("✅ Finished **run config.yml**\n\n"))

    def test_duration(self) -> None:
        self.sut.start_section("timed")
        self.sut.finish_section()
        self.assertRegex(self.stream.getvalue(), r"✅ Finished \*\*timed\*\*( \([0-9.]+s\))?\n\n$")

    def test_messages(self) -> None:
        self.sut.detail("hidden")
        self.sut.warning("careful")
        self.sut.error("bad")
        self.assertEqual("⚠️ careful\n\n❌ bad\n\n", self.stream.getvalue())

    def test_detail_shown(self) -> None:
        sut: StatusWriter = StatusWriter(self.stream, show_detail=True)
        sut.detail("shown")
        self.assertEqual("🔎 shown\n\n", self.stream.getvalue())

    def test_table(self) -> None:
        self.sut.table(["a", "bb"], [[1, 22]])
        self.assertEqual("| a | bb |\n| - | -- |\n| 1 | 22 |\n\n", self.stream.getvalue())

    def test_context_managers(self) -> None:
        with self.assertRaises(KeyError):
            with self.sut.section("outer"):
                with self.sut.item("step"):
                    raise KeyError("missing")
        output: str = self.stream.getvalue()
        self.assertIn(" - step... ❌ 'missing'", output)
        self.assertIn("❌ Finished **outer**", output)

    def test_unbalanced(self) -> None:
        with self.assertRaises(SimException):
            self.sut.finish_section()
        with self.assertRaises(SimException):
            self.sut.finish_item()
        self.sut.start_item("once")
        self.sut.finish_item()
        with self.assertRaises(SimException):
            self.sut.finish_item()
