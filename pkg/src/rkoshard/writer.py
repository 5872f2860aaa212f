# Copyright (c) 2025 R.K. Oliver. All rights reserved.
#
# This work is licensed under the terms of the MIT license.
# For a copy, see <https://opensource.org/licenses/MIT>.

from __future__ import annotations

from datetime import datetime, timedelta
from enum import Enum, auto
from typing import Any, ClassVar, Final, Generic, Sequence, TextIO, TypeVar

from rkoshard import BaseStatus, SimException


class EventPair(Enum):
    SECTION = auto()
    ITEM = auto()


T = TypeVar("T")


class StatusEvent(Generic[T]):
    pair_type: ClassVar[EventPair | None] = None
    is_start: ClassVar[bool] = False
    prefix: ClassVar[str] = "\n\n"
    suffix: ClassVar[str] = "\n\n"

    def __init__(self, event: T, start: datetime | None = None) -> None:
        self.event: T = event
        self.start: datetime | None = start

    def write_event(
        self,
        stream: TextIO,
        depth: int = 0,
        prev_event: StatusEvent | None = None,
        duration: timedelta | None = None,
    ) -> None:
        self._write_prefix(stream, prev_event=prev_event)
        self._write_indent(stream, depth, prev_event=prev_event)
        self._write_event(stream, depth, duration=None if self.is_start else duration)
        stream.write(self.suffix)

    def _write_prefix(self, stream: TextIO, prev_event: StatusEvent | None) -> None:
        if prev_event and not prev_event.suffix.endswith(self.prefix):
            stream.write(self.prefix.removeprefix(prev_event.suffix))

    def _write_indent(self, stream: TextIO, depth: int, prev_event: StatusEvent | None = None) -> None:
        pass

    def _write_event(self, stream: TextIO, depth: int, duration: timedelta | None = None) -> None:
        stream.write(str(self.event))
        self._write_duration(stream, duration=duration)

    def _write_duration(self, stream: TextIO, duration: timedelta | None) -> None:
        if duration:
            stream.write(f" ({format_duration(duration)})")


def format_duration(duration: timedelta) -> str:
    # 12h34m56.123s
    millis: int = int(duration.microseconds / 1000)
    minutes, seconds = divmod(duration.seconds, 60)
    hours, minutes = divmod(minutes, 60)
    hours += duration.days * 24
    if hours != 0:
        return f"{hours}h{minutes}m"
    if minutes != 0:
        return f"{minutes}m{seconds}s"
    if seconds > 4:
        return f"{seconds}s"
    if seconds == 0 and millis == 0:
        return "0s"
    return f"{seconds}.{millis:03d}s"


class SectionStartEvent(StatusEvent[str]):
    pair_type = EventPair.SECTION
    is_start = True

    def _write_indent(self, stream: TextIO, depth: int, prev_event: StatusEvent | None = None) -> None:
        stream.write("#" + "#" * depth + " ")


class SectionFinishEvent(StatusEvent[str]):
    pair_type = EventPair.SECTION

    def __init__(self, name: str, errors: Sequence[str | Exception] = ()) -> None:
        super().__init__(name)
        self.errors: list[str | Exception] = list(errors)

    def _write_indent(self, stream: TextIO, depth: int, prev_event: StatusEvent | None = None) -> None:
        stream.write("❌ " if self.errors else "✅ ")

    def _write_event(self, stream: TextIO, depth: int, duration: timedelta | None = None) -> None:
        stream.write(f"Finished **{self.event}**")
        self._write_duration(stream, duration)
        if len(self.errors) == 1:
            stream.write(f"\n❌ {self.errors[0]}")
        else:
            for error in self.errors:
                stream.write(f"\n - ❌ {error}")


class ItemStartEvent(StatusEvent[str]):
    pair_type = EventPair.ITEM
    is_start = True
    prefix = "\n"
    suffix = ""

    def _write_indent(self, stream: TextIO, depth: int, prev_event: StatusEvent | None = None) -> None:
        stream.write("  " * depth + " - ")

    def _write_event(self, stream: TextIO, depth: int, duration: timedelta | None = None) -> None:
        stream.write(f"{self.event}...")


class ItemFinishEvent(StatusEvent[str]):
    pair_type = EventPair.ITEM
    prefix = ""
    suffix = "\n"

    def __init__(self, outcome: str = "done.", errors: Sequence[str | Exception] = ()) -> None:
        super().__init__(outcome)
        self.errors: list[str | Exception] = list(errors)

    def _write_indent(self, stream: TextIO, depth: int, prev_event: StatusEvent | None = None) -> None:
        stream.write(" ")

    def _write_event(self, stream: TextIO, depth: int, duration: timedelta | None = None) -> None:
        if not self.errors:
            super()._write_event(stream, depth, duration)
        elif len(self.errors) == 1:
            stream.write(f"❌ {self.errors[0]}")
            self._write_duration(stream, duration)
        else:
            stream.write("❌")
            self._write_duration(stream, duration)
            for error in self.errors:
                stream.write(f"\n{'  ' * depth} - ❌ {error}")


class MessageEvent(StatusEvent[str]):
    pass


class ErrorEvent(StatusEvent[str | Exception]):
    def _write_event(self, stream: TextIO, depth: int, duration: timedelta | None = None) -> None:
        stream.write(f"❌ {self.event}")


class TableEvent(StatusEvent[Sequence[Sequence[str]]]):
    """A markdown table; the first row is the header."""

    def _write_event(self, stream: TextIO, depth: int, duration: timedelta | None = None) -> None:
        rows: Sequence[Sequence[str]] = self.event
        widths: list[int] = [max(len(row[column]) for row in rows) for column in range(len(rows[0]))]

        def line(cells: Sequence[str]) -> str:
            return "| " + " | ".join(cell.ljust(width) for cell, width in zip(cells, widths)) + " |"

        lines: list[str] = [line(rows[0]), line(["-" * width for width in widths])]
        lines += [line(row) for row in rows[1:]]
        stream.write("\n".join(lines))


class StatusWriter(BaseStatus):
    """Renders status events to a text stream as markdown."""

    WARNING_CHAR: Final[str] = "⚠️"
    DETAIL_CHAR: Final[str] = "🔎"

    def __init__(self, stream: TextIO, show_detail: bool = True) -> None:
        self._show_detail: bool = show_detail
        self._stream: TextIO = stream
        self._event_stack: list[StatusEvent] = []

    def _write_event_and_append(self, event: StatusEvent) -> None:
        prev_event: StatusEvent | None = self._event_stack[-1] if self._event_stack else None
        duration: timedelta | None = None
        if event.pair_type is not None and not event.is_start:
            start_event: StatusEvent = self._find_start_event(event.pair_type)
            if start_event.start:
                duration = datetime.now() - start_event.start
        depth: int = self._depth(event.pair_type)
        event.write_event(self._stream, depth=depth, prev_event=prev_event, duration=duration)
        self._event_stack.append(event)

    def _depth(self, pair_type: EventPair | None) -> int:
        if pair_type is None:
            return 0
        depth: int = 0
        for event in self._event_stack:
            if event.pair_type is pair_type:
                depth += 1 if event.is_start else -1
        return depth

    def start_section(self, name: str, include_duration: bool = True) -> None:
        self._write_event_and_append(SectionStartEvent(name, start=datetime.now() if include_duration else None))

    def finish_section(self, name: str | None = None) -> None:
        start: StatusEvent = self._find_start_event(EventPair.SECTION)
        self._write_event_and_append(SectionFinishEvent(name or start.event, errors=self._errors_since(start)))

    def start_item(self, description: str, include_duration: bool = False) -> None:
        self._write_event_and_append(ItemStartEvent(description, start=datetime.now() if include_duration else None))

    def finish_item(self, outcome: str = "done.", error: str | Exception | None = None) -> None:
        if error is not None:
            self.error(error)
        start: StatusEvent = self._find_start_event(EventPair.ITEM)
        self._write_event_and_append(ItemFinishEvent(outcome, errors=self._errors_since(start)))

    def info(self, info: str) -> None:
        self._write_event_and_append(MessageEvent(info))

    def detail(self, detail: str) -> None:
        if self._show_detail:
            self._write_event_and_append(MessageEvent(f"{self.DETAIL_CHAR} {detail}"))

    def warning(self, warning: str | Exception) -> None:
        self._write_event_and_append(MessageEvent(f"{self.WARNING_CHAR} {warning}"))

    def error(self, error: str | Exception) -> None:
        event: ErrorEvent = ErrorEvent(error)
        if self._depth(EventPair.ITEM) > 0:
            # Written by finish_item().
            self._event_stack.append(event)
        else:
            self._write_event_and_append(event)

    def table(self, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        cells: list[list[str]] = [[str(cell) for cell in header]] + [[str(cell) for cell in row] for row in rows]
        self._write_event_and_append(TableEvent(cells))

    def _errors_since(self, start: StatusEvent) -> list[str | Exception]:
        index: int = max(i for i, event in enumerate(self._event_stack) if event is start)
        return [event.event for event in self._event_stack[index:] if isinstance(event, ErrorEvent)]

    def _find_start_event(self, pair_type: EventPair) -> StatusEvent:
        open_events: list[StatusEvent] = []
        for event in self._event_stack:
            if event.pair_type is not pair_type:
                continue
            if event.is_start:
                open_events.append(event)
            elif open_events:
                open_events.pop()
        if not open_events:
            raise SimException(f"No open {pair_type.name.lower()} to finish")
        return open_events[-1]
