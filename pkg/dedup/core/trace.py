"""
Stack trace domain types, native record parsing and content hashing.
"""

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Tuple

from dedup.exceptions import ParseError

# "(Foo.java:123)" style source location at the end of a frame
_SOURCE_LOCATION = re.compile(r"\s*\([^()\s]+\.[A-Za-z0-9]+:\d+\)\s*$")

NATIVE_FIELDS = ("report_id", "timestamp", "frames", "category_id")


def normalize_frame(raw: str) -> str:
    """Strip whitespace and a trailing ``(File.ext:line)`` suffix."""
    text = raw.strip()
    stripped = _SOURCE_LOCATION.sub("", text)
    return stripped if stripped else text


@dataclass(frozen=True)
class Frame:
    """One stack frame; ``normalized`` is its identity."""
    raw: str
    normalized: str = field(init=False)

    def __post_init__(self):
        if not self.raw or not self.raw.strip():
            raise ValueError("frame text is empty")
        object.__setattr__(self, "normalized", normalize_frame(self.raw))

    def __str__(self) -> str:
        return self.normalized


@dataclass(frozen=True)
class ContentHash:
    """64-bit digest of a trace's normalized frame sequence."""
    digest: int

    @property
    def hex(self) -> str:
        return f"{self.digest:016x}"

    @classmethod
    def from_hex(cls, value: str) -> "ContentHash":
        return cls(int(value, 16))

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True)
class StackTrace:
    """
    A crash report reduced to what deduplication uses.

    Attributes:
        report_id: Opaque report identifier
        timestamp: Milliseconds since epoch
        frames: Frames, top of stack first
        category_id: Ground-truth category when known
    """
    report_id: str
    timestamp: int
    frames: Tuple[Frame, ...]
    category_id: Optional[str] = None

    def __post_init__(self):
        if not self.frames:
            raise ValueError("stack trace has no frames")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if not isinstance(self.frames, tuple):
            object.__setattr__(self, "frames", tuple(self.frames))

    @classmethod
    def build(cls, report_id: str, timestamp: int, frames: Iterable[str],
              category_id: Optional[str] = None) -> "StackTrace":
        """Convenience constructor from raw frame strings."""
        return cls(str(report_id), int(timestamp), tuple(Frame(f) for f in frames), category_id)

    @property
    def frame_keys(self) -> Tuple[str, ...]:
        return tuple(f.normalized for f in self.frames)

    def with_category(self, category_id: Optional[str]) -> "StackTrace":
        return StackTrace(self.report_id, self.timestamp, self.frames, category_id)

    def to_record(self) -> Dict[str, Any]:
        """Native JSON-lines record."""
        record = {
            "report_id": self.report_id,
            "timestamp": self.timestamp,
            "frames": [f.raw for f in self.frames],
        }
        if self.category_id is not None:
            record["category_id"] = self.category_id
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False)


def parse_report(record: Any, line_number: Optional[int] = None) -> StackTrace:
    """
    Parse one native dataset record.

    Args:
        record: A JSON text line or an already decoded mapping
        line_number: 1-based line number used in error messages

    Returns:
        Parsed stack trace

    Raises:
        ParseError: naming the offending field and line
    """
    if isinstance(record, (str, bytes)):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON ({e.msg})", field="record", line_number=line_number) from e
    if not isinstance(record, dict):
        raise ParseError("record is not an object", field="record", line_number=line_number)

    report_id = record.get("report_id")
    if not isinstance(report_id, str) or not report_id:
        raise ParseError("missing or non-string report_id", field="report_id", line_number=line_number)

    timestamp = record.get("timestamp")
    if isinstance(timestamp, bool) or not isinstance(timestamp, int):
        raise ParseError("missing or non-integer timestamp", field="timestamp", line_number=line_number)
    if timestamp < 0:
        raise ParseError("negative timestamp", field="timestamp", line_number=line_number)

    if "frames" not in record:
        raise ParseError("missing frames", field="frames", line_number=line_number)
    frames = record["frames"]
    if not isinstance(frames, list):
        raise ParseError("frames is not an array", field="frames", line_number=line_number)
    if not frames:
        raise ParseError("frames empty", field="frames", line_number=line_number)
    parsed = []
    for position, text in enumerate(frames):
        if not isinstance(text, str) or not text.strip():
            raise ParseError(f"frame {position} is empty or not a string", field="frames",
                             line_number=line_number)
        parsed.append(Frame(text))

    category_id = record.get("category_id")
    if category_id is not None and not isinstance(category_id, str):
        raise ParseError("category_id is not a string", field="category_id", line_number=line_number)

    return StackTrace(report_id, timestamp, tuple(parsed), category_id)


def content_hash(trace: StackTrace) -> ContentHash:
    """
    Digest the normalized frame sequence.

    Each frame is length-prefixed so frame boundaries are part of the digest.
    """
    digest = hashlib.blake2b(digest_size=8)
    for key in trace.frame_keys:
        data = key.encode("utf-8")
        digest.update(len(data).to_bytes(4, "little"))
        digest.update(data)
    return ContentHash(int.from_bytes(digest.digest(), "little"))
