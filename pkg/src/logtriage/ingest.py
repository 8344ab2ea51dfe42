"""Parsing of plain-text logs into ordered structured records and tokens.

Header layouts follow the common dataset convention of whitespace-separated
fields (date, time, level, component) in front of a free-text message; the
layout is named in the config and unmatched lines degrade to message-only
records rather than erroring.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

NUM_TOKEN = "<num>"

# Field names a header pattern may use. "message" must come last and eats
# the rest of the line; "skip" discards one token.
HEADER_FIELDS = ("timestamp", "date", "time", "level", "source", "message", "skip")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class CorpusError(Exception):
    """Unusable corpus input (empty file, undecodable header pattern)."""


@dataclass(frozen=True)
class HeaderFormat:
    """Whitespace-delimited field order for one log layout, e.g.
    ``date time level source message``."""

    name: str
    fields: tuple[str, ...]

    def __post_init__(self):
        if not self.fields or self.fields[-1] != "message":
            raise CorpusError(
                f"format {self.name!r} must end with 'message', got {self.fields}"
            )
        for f in self.fields:
            if f not in HEADER_FIELDS:
                raise CorpusError(f"format {self.name!r} has unknown field {f!r}")

    @classmethod
    def from_spec(cls, name: str, spec: str) -> "HeaderFormat":
        return cls(name=name, fields=tuple(spec.split()))


DEFAULT_FORMAT = HeaderFormat.from_spec("default", "date time level source message")


@dataclass(frozen=True)
class LogRecord:
    index: int
    raw: str
    message: str
    timestamp: Optional[int] = None  # epoch milliseconds, UTC
    level: Optional[str] = None
    source: Optional[str] = None


@dataclass
class EventStream:
    records: list[LogRecord]
    format_id: str
    matched: int = 0
    unmatched: int = 0
    blank: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def stats(self) -> dict:
        return {
            "length": len(self.records),
            "format": self.format_id,
            "matched": self.matched,
            "unmatched": self.unmatched,
            "blank": self.blank,
        }


def _parse_timestamp(date_part: Optional[str], time_part: Optional[str]) -> Optional[int]:
    """Epoch milliseconds from 'YYYY-MM-DD' + 'HH:MM:SS[.fff]' or a bare epoch
    integer; None when unparseable."""
    if date_part is not None and time_part is not None:
        text = f"{date_part} {time_part}"
        for fmt in ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S"):
            try:
                dt = datetime.strptime(text, fmt).replace(tzinfo=timezone.utc)
                return int(dt.timestamp() * 1000)
            except ValueError:
                continue
        return None
    if date_part is not None and time_part is None:
        try:
            return int(date_part)
        except ValueError:
            return None
    return None


def parse_line(raw: str, fmt: HeaderFormat = DEFAULT_FORMAT, index: int = 0) -> tuple[LogRecord, bool]:
    """Parse one line against a header layout.

    Returns (record, matched). A line with fewer tokens than the header
    needs does not match: the whole line becomes the message and the other
    fields stay absent.
    """
    raw = raw.rstrip("\r\n")
    head = fmt.fields[:-1]
    parts = raw.split(None, len(head))
    if len(parts) < len(fmt.fields):
        return LogRecord(index=index, raw=raw, message=raw), False

    values: dict[str, str] = {}
    for name, tok in zip(head, parts):
        if name != "skip":
            values[name] = tok
    message = parts[-1] if head else raw

    if "timestamp" in values:
        ts = _parse_timestamp(values.get("timestamp"), None)
    else:
        ts = _parse_timestamp(values.get("date"), values.get("time"))
    record = LogRecord(
        index=index,
        raw=raw,
        message=message,
        timestamp=ts,
        level=values.get("level"),
        source=values.get("source"),
    )
    return record, True


def load_corpus(path: str | Path, fmt: HeaderFormat = DEFAULT_FORMAT) -> EventStream:
    """Load a log file into an EventStream, one record per non-blank line.

    Invalid UTF-8 is decoded with replacement; blank lines are skipped and
    counted. Raises OSError for unreadable paths and CorpusError when no
    non-blank line exists.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise OSError(f"cannot read log corpus {path}: {exc}") from exc

    stream = EventStream(records=[], format_id=fmt.name)
    for line in text.splitlines():
        if not line.strip():
            stream.blank += 1
            continue
        record, matched = parse_line(line, fmt, index=len(stream.records))
        stream.records.append(record)
        if matched:
            stream.matched += 1
        else:
            stream.unmatched += 1
    if not stream.records:
        raise CorpusError(f"corpus {path} contains no non-blank lines")
    return stream


def mask_number(token: str) -> str:
    """Replace a pure-digit token with the number placeholder; idempotent."""
    return NUM_TOKEN if token.isdigit() else token


def tokenize(message: str) -> list[str]:
    """Lowercased alphanumeric runs, with pure-number runs masked to <num>."""
    return [mask_number(tok) for tok in _TOKEN_RE.findall(message.lower())]
