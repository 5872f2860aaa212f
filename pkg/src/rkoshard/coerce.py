# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

import os
from enum import Enum
from fractions import Fraction
from os import PathLike
from pathlib import Path
from typing import Any, TypeVar

E = TypeVar("E", bound=Enum)


def as_bool(value: Any) -> bool:
    """
    Coerces a value to ``bool``.
    Unreasonable values raise a ``ValueError``.

    :param value: The value to coerce.
    :returns: The `value` as a ``bool``.
    """
    if isinstance(value, bool):
        return value
    if isinstance(value, int):
        if value in (0, 1):
            return bool(value)
        raise ValueError(f"Integer {value} is not a valid boolean value (expected 0 or 1)")
    if isinstance(value, str):
        val = value.strip().lower()
        if val in {"true", "1", "yes", "on"}:
            return True
        if val in {"false", "0", "no", "off"}:
            return False
    raise ValueError(f"Cannot interpret {value!r} as a boolean")


def as_int(value: Any) -> int:
    """
    Coerces a value to ``int``.
    Unreasonable values raise a ``ValueError``.

    :param value: The value to coerce.
    :returns: The `value` as an ``int``.
    """
    if isinstance(value, bool):
        raise ValueError(f"Cannot interpret {value!r} as an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    try:
        return int(str(value).strip())
    except (ValueError, TypeError) as e:
        raise ValueError(f"Cannot interpret {value!r} as an integer") from e


def as_float(value: Any) -> float:
    """
    Coerces a value to ``float``. Rational strings such as ``"1/16"`` are accepted.
    Unreasonable values raise a ``ValueError``.

    :param value: The value to coerce.
    :returns: The `value` as a ``float``.
    """
    if isinstance(value, bool):
        raise ValueError(f"Cannot interpret {value!r} as a float")
    if isinstance(value, float):
        return value
    if isinstance(value, (int, Fraction)):
        return float(value)
    try:
        return float(str(value).strip())
    except (ValueError, TypeError):
        pass
    try:
        return float(as_fraction(value))
    except ValueError as e:
        raise ValueError(f"Cannot interpret {value!r} as a float") from e


def as_fraction(value: Any) -> Fraction:
    """
    Coerces a value to an exact ``Fraction``: ``"1/16"``, ``"0.0625"``, ``0.0625`` and
    ``Fraction(1, 16)`` all give ``1/16``. Floats are converted through their shortest ``repr``.

    :param value: The value to coerce.
    :returns: The `value` as a ``Fraction``.
    """
    if isinstance(value, bool):
        raise ValueError(f"Cannot interpret {value!r} as a fraction")
    if isinstance(value, (Fraction, int)):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    try:
        return Fraction(str(value).strip())
    except (ValueError, TypeError, ZeroDivisionError) as e:
        raise ValueError(f"Cannot interpret {value!r} as a fraction") from e


def as_enum(value: Any, enum_type: type[E]) -> E:
    """
    Coerces a value to a member of ``enum_type``, matching member values or names case-insensitively.

    :param value: The value to coerce.
    :param enum_type: The enumeration.
    :returns: The matching member.
    """
    if isinstance(value, enum_type):
        return value
    text: str = str(value).strip().lower()
    for member in enum_type:
        if text in (str(member.value).lower(), member.name.lower()):
            return member
    choices: str = ", ".join(str(member.value) for member in enum_type)
    raise ValueError(f"Cannot interpret {value!r} as {enum_type.__name__} (expected one of: {choices})")


def as_int_list(value: Any) -> list[int]:
    """
    Coerces a list, or a comma-separated string such as ``"2,16,3"``, to a list of ``int``.

    :param value: The value to coerce.
    :returns: The `value` as a ``list[int]``.
    """
    if isinstance(value, str):
        value = [part for part in value.replace("[", "").replace("]", "").split(",") if part.strip()]
    if not isinstance(value, (list, tuple)):
        raise ValueError(f"Cannot interpret {value!r} as a list of integers")
    return [as_int(item) for item in value]


def as_str(value: Any) -> str:
    """
    Coerces a value to ``str``. That is, call ``str(value)``.
    If value is ``None`` a ``ValueError`` is raised.

    :param value: The value to coerce.
    :returns: The `value` as a ``str``.
    """
    if value is None:
        raise ValueError("Cannot interpret None as a string")
    return str(value)


def as_path(value: str | PathLike | None) -> Path | None:
    """
    Returns a `Path` instance for the provided value.
    :param value: The value to return as a `Path` instance. If `value` is a `Path`, return it unchanged.
    :return: A `Path` instance or `None` if `value` is `None`.
    """
    if value is None or isinstance(value, Path):
        return value
    return Path(os.fspath(value))
