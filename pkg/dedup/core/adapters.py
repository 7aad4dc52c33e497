"""
Converters from public bug-report dumps into the native dataset schema.

The Ubuntu, Eclipse, NetBeans and Gnome dumps share one shape: an array (or
JSON lines) of bug objects with a numeric id, a creation time, an optional
``dup_id`` pointing at the master bug, and one or more stack traces whose
frames carry a function name. Duplicate chains are resolved so every report
lands in the category of its root master.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple, Union

from dedup.core.trace import StackTrace
from dedup.exceptions import ConfigError, ParseError

logger = logging.getLogger(__name__)


def _load_records(path: Path) -> Iterator[Tuple[int, Any]]:
    """Yield ``(line_number, object)`` from a JSON array or JSON-lines file."""
    with open(path, "r", encoding="utf-8") as f:
        head = f.read(1)
        while head and head.isspace():
            head = f.read(1)
        f.seek(0)
        if head == "[":
            for position, item in enumerate(json.load(f), start=1):
                yield position, item
            return
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield number, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", field="record", line_number=number) from e


def _to_millis(value: Any) -> int:
    """Convert epoch seconds/millis or an ISO date string to epoch millis."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        # values below ~1e11 are seconds (anything before year 5138)
        return int(value * 1000) if value < 1e11 else int(value)
    if isinstance(value, str):
        text = value.strip().replace("Z", "+00:00")
        try:
            moment = datetime.fromisoformat(text)
        except ValueError:
            moment = datetime.strptime(text[:19], "%Y-%m-%d %H:%M:%S")
        if moment.tzinfo is None:
            moment = moment.replace(tzinfo=timezone.utc)
        return int(moment.timestamp() * 1000)
    raise ValueError(f"unsupported timestamp {value!r}")


class _Roots:
    """Union-find over bug ids resolving duplicate chains to their master."""

    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, key: str) -> str:
        self.parent.setdefault(key, key)
        root = key
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[key] != root:
            self.parent[key], key = root, self.parent[key]
        return root

    def union(self, child: str, master: str) -> None:
        a, b = self.find(child), self.find(master)
        if a != b:
            self.parent[a] = b


class BugDumpAdapter:
    """
    Adapter for bug dumps with ``bug_id`` / ``dup_id`` / ``creation_ts`` fields.

    Subclasses tune the key names and how frame names are read.
    """

    name = "bugdump"
    id_keys = ("bug_id", "id")
    dup_keys = ("dup_id", "duplicate_of")
    time_keys = ("creation_ts", "timestamp", "created")
    trace_keys = ("stacktrace", "stacktraces", "stack")
    frame_name_keys = ("function", "name", "method")

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def _first(self, obj: Dict[str, Any], keys: Iterable[str]) -> Any:
        for key in keys:
            if key in obj and obj[key] is not None:
                return obj[key]
        return None

    def frame_text(self, frame: Any) -> Optional[str]:
        """Extract the frame's function name, or None when unusable."""
        if isinstance(frame, str):
            text = frame
        elif isinstance(frame, dict):
            text = self._first(frame, self.frame_name_keys)
        else:
            return None
        if not isinstance(text, str) or not text.strip() or text.strip() == "??":
            return None
        return text.strip()

    def extract_frames(self, record: Dict[str, Any]) -> List[str]:
        """Frames of all traces in the record, outermost trace first."""
        traces = self._first(record, self.trace_keys)
        if isinstance(traces, dict):
            traces = [traces]
        frames: List[str] = []
        for trace in traces or []:
            items = trace.get("frames", []) if isinstance(trace, dict) else trace
            for frame in items or []:
                text = self.frame_text(frame)
                if text:
                    frames.append(text)
        return frames

    def convert(self, path: Union[str, Path], strict: bool = False) -> Tuple[List[StackTrace], List[Tuple[int, str]]]:
        """
        Convert a dump into native reports.

        Args:
            path: Dump file (JSON array or JSON lines)
            strict: Raise on the first unusable record

        Returns:
            Reports and the ``(line, reason)`` list of skipped records
        """
        roots = _Roots()
        pending: List[Tuple[str, int, List[str]]] = []
        malformed: List[Tuple[int, str]] = []

        for number, record in _load_records(Path(path)):
            try:
                if not isinstance(record, dict):
                    raise ParseError("record is not an object", field="record", line_number=number)
                bug_id = self._first(record, self.id_keys)
                if bug_id is None:
                    raise ParseError("missing bug id", field="bug_id", line_number=number)
                raw_time = self._first(record, self.time_keys)
                if raw_time is None:
                    raise ParseError("missing creation time", field="creation_ts", line_number=number)
                try:
                    timestamp = _to_millis(raw_time)
                except ValueError as e:
                    raise ParseError(str(e), field="creation_ts", line_number=number) from e
                frames = self.extract_frames(record)
                if not frames:
                    raise ParseError("frames empty", field="frames", line_number=number)
            except ParseError as e:
                if strict:
                    raise
                malformed.append((number, str(e)))
                continue

            key = str(bug_id)
            roots.find(key)
            dup = self._first(record, self.dup_keys)
            if dup is not None and str(dup) != key:
                roots.union(key, str(dup))
            pending.append((key, timestamp, frames))

        reports = [
            StackTrace.build(key, timestamp, frames, category_id=roots.find(key))
            for key, timestamp, frames in pending
        ]
        self.logger.info(f"{self.name}: converted {len(reports)} reports, skipped {len(malformed)}")
        return reports, malformed


class UbuntuAdapter(BugDumpAdapter):
    name = "ubuntu"


class GnomeAdapter(BugDumpAdapter):
    name = "gnome"


class EclipseAdapter(BugDumpAdapter):
    name = "eclipse"


class NetBeansAdapter(BugDumpAdapter):
    name = "netbeans"


ADAPTERS: Dict[str, Callable[[], BugDumpAdapter]] = {
    "ubuntu": UbuntuAdapter,
    "eclipse": EclipseAdapter,
    "netbeans": NetBeansAdapter,
    "gnome": GnomeAdapter,
}


def get_adapter(name: str) -> BugDumpAdapter:
    """Look up a dump adapter by name."""
    if name not in ADAPTERS:
        raise ConfigError(f"Unknown adapter '{name}'. Available: native, synthetic, {', '.join(sorted(ADAPTERS))}")
    return ADAPTERS[name]()
