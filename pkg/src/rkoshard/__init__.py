# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

from contextlib import AbstractContextManager, contextmanager
from typing import Any, Generator, Protocol, Sequence, TypeAlias

import numpy as np
import numpy.typing as npt

Vector: TypeAlias = npt.NDArray[np.float64]
"""A dense 1-D vector of 64-bit floats (parameters, gradients, momenta, updates)."""

Matrix: TypeAlias = npt.NDArray[np.float64]
"""A dense 2-D array of 64-bit floats (batch inputs, chunked vectors, weight blocks)."""


class SimException(Exception):
    """Base class for simulator errors."""

    pass


class ConfigError(SimException):
    """
    Raised for invalid configuration or violated preconditions that originate in configuration.
    All violations found are reported together.
    """

    def __init__(self, violations: str | Sequence[str]) -> None:
        if isinstance(violations, str):
            violations = [violations]
        self.violations: list[str] = list(violations)
        super().__init__("; ".join(self.violations))


class ProtocolError(SimException):
    """Raised when the members of a collective disagree (lengths, schemes, steps, index sets)."""

    pass


class DivergenceError(SimException):
    """Raised when a loss or gradient becomes non-finite."""

    def __init__(self, message: str, *, step: int | None = None, rank: int | None = None) -> None:
        location: list[str] = []
        if step is not None:
            location.append(f"step {step}")
        if rank is not None:
            location.append(f"rank {rank}")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.detail: str = message
        self.step: int | None = step
        self.rank: int | None = rank


class SimStatus(Protocol):
    def start_section(self, name: str) -> None: ...

    def finish_section(self, name: str | None = None) -> None: ...

    def start_item(self, description: str) -> None: ...

    def finish_item(self, outcome: str = "done.", error: str | Exception | None = None) -> None: ...

    def info(self, info: str) -> None: ...

    def detail(self, detail: str) -> None: ...

    def warning(self, warning: Exception | str) -> None: ...

    def error(self, error: Exception | str) -> None: ...

    def table(self, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None: ...

    def section(self, name: str) -> AbstractContextManager[None]: ...

    def item(self, description: str) -> AbstractContextManager[None]: ...


class BaseStatus(SimStatus):
    """
    A `SimStatus` that ignores every event. Subclasses override what they render and
    inherit the ``section`` and ``item`` context managers.
    """

    def start_section(self, name: str) -> None:  # pragma: no cover
        pass

    def finish_section(self, name: str | None = None) -> None:  # pragma: no cover
        pass

    def start_item(self, description: str) -> None:  # pragma: no cover
        pass

    def finish_item(self, outcome: str = "done.", error: str | Exception | None = None) -> None:  # pragma: no cover
        pass

    def info(self, info: str) -> None:  # pragma: no cover
        pass

    def detail(self, detail: str) -> None:  # pragma: no cover
        pass

    def warning(self, warning: Exception | str) -> None:  # pragma: no cover
        pass

    def error(self, error: Exception | str) -> None:  # pragma: no cover
        pass

    def table(self, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:  # pragma: no cover
        pass

    @contextmanager
    def section(self, name: str) -> Generator[None, Any, None]:
        try:
            self.start_section(name)
            yield
        except Exception as e:
            self.error(e)
            raise
        finally:
            self.finish_section(name)

    @contextmanager
    def item(self, description: str) -> Generator[None, Any, None]:
        try:
            self.start_item(description)
            yield
        except Exception as e:
            self.error(e)
            raise
        finally:
            self.finish_item()


class NullStatus(BaseStatus):
    """Status sink used by ``--quiet`` runs and by tests."""

    pass


def require(violations: list[str]) -> None:
    """
    Raise a single `ConfigError` listing every collected violation, if any.

    :param violations: Violation messages collected by a validator.
    """
    if violations:
        raise ConfigError(violations)
