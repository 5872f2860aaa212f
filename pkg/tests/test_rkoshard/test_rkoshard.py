# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from unittest import TestCase
from unittest.mock import MagicMock, call

from rkoshard import (
    BaseStatus,
    ConfigError,
    DivergenceError,
    NullStatus,
    ProtocolError,
    SimException,
    require,
)


class TestSimException(TestCase):
    def test_can_raise(self) -> None:
        try:
            raise SimException("error")
        except SimException as e:
            self.assertEqual("error", str(e))

    def test_subclasses(self) -> None:
        for error_type in (ConfigError, ProtocolError, DivergenceError):
            with self.subTest(error_type=error_type):
                self.assertTrue(issubclass(error_type, SimException))


class TestConfigError(TestCase):
    def test_single(self) -> None:
        error: ConfigError = ConfigError("bad value")
        self.assertEqual(["bad value"], error.violations)
        self.assertEqual("bad value", str(error))

    def test_many(self) -> None:
        error: ConfigError = ConfigError(["first", "second"])
        self.assertEqual(["first", "second"], error.violations)
        self.assertEqual("first; second", str(error))


class TestDivergenceError(TestCase):
    def test_location(self) -> None:
        self.assertEqual("nan", str(DivergenceError("nan")))
        self.assertEqual("nan (step 3)", str(DivergenceError("nan", step=3)))
        self.assertEqual("nan (step 3, rank 1)", str(DivergenceError("nan", step=3, rank=1)))
        self.assertEqual("nan (rank 0)", str(DivergenceError("nan", rank=0)))

    def test_attributes(self) -> None:
        error: DivergenceError = DivergenceError("inf loss", step=7, rank=2)
        self.assertEqual("inf loss", error.detail)
        self.assertEqual(7, error.step)
        self.assertEqual(2, error.rank)


class TestRequire(TestCase):
    def test_nothing(self) -> None:
        require([])

    def test_raises_all(self) -> None:
        with self.assertRaises(ConfigError) as e:
            require(["a", "b"])
        self.assertEqual(["a", "b"], e.exception.violations)


class TestBaseStatus(TestCase):
    def test_null_status_ignores_everything(self) -> None:
        sut: NullStatus = NullStatus()
        sut.start_section("section")
        sut.start_item("item")
        sut.info("info")
        sut.detail("detail")
        sut.warning("warning")
        sut.error("error")
        sut.table(["a"], [["1"]])
        sut.finish_item()
        sut.finish_section()

    def test_section(self) -> None:
        sut: BaseStatus = BaseStatus()
        sut.start_section = MagicMock()  # type: ignore[method-assign]
        sut.finish_section = MagicMock()  # type: ignore[method-assign]
        with sut.section("name"):
            pass
        sut.start_section.assert_called_once_with("name")
        sut.finish_section.assert_called_once_with("name")

    def test_section_error(self) -> None:
        sut: BaseStatus = BaseStatus()
        sut.error = MagicMock()  # type: ignore[method-assign]
        sut.finish_section = MagicMock()  # type: ignore[method-assign]
        error: ValueError = ValueError("boom")
        with self.assertRaises(ValueError):
            with sut.section("name"):
                raise error
        sut.error.assert_called_once_with(error)
        sut.finish_section.assert_called_once_with("name")

    def test_item(self) -> None:
        sut: BaseStatus = BaseStatus()
        mock = MagicMock()
        sut.start_item = mock.start_item  # type: ignore[method-assign]
        sut.finish_item = mock.finish_item  # type: ignore[method-assign]
        sut.error = mock.error  # type: ignore[method-assign]
        with self.assertRaises(KeyError):
            with sut.item("thing"):
                raise KeyError("missing")
        self.assertEqual(
            [call.start_item("thing"), call.error(mock.error.call_args.args[0]), call.finish_item()],
            mock.mock_calls,
        )
