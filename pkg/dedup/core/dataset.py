"""
Native JSON-lines dataset I/O and chronological splitting.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

from dedup.core.trace import StackTrace, parse_report
from dedup.exceptions import DataError, EmptyInputError, ParseError

logger = logging.getLogger(__name__)


@dataclass
class ReadSummary:
    """Outcome of reading a dataset file."""
    reports: List[StackTrace] = field(default_factory=list)
    malformed: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def categories(self) -> int:
        return len({r.category_id for r in self.reports if r.category_id is not None})


def iter_lines(path: Union[str, Path]) -> Iterator[Tuple[int, str]]:
    """Yield ``(line_number, text)`` for non-blank lines of a UTF-8 file."""
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if line.strip():
                yield number, line


def read_dataset(path: Union[str, Path], strict: bool = True) -> ReadSummary:
    """
    Read a native dataset.

    Args:
        path: JSON-lines file
        strict: Raise on the first malformed line instead of skipping it

    Returns:
        Parsed reports and the malformed lines that were skipped
    """
    summary = ReadSummary()
    for number, line in iter_lines(path):
        try:
            summary.reports.append(parse_report(line, line_number=number))
        except ParseError as e:
            if strict:
                raise
            logger.warning(f"Skipping malformed record: {e}")
            summary.malformed.append((number, str(e)))
    logger.info(f"Read {len(summary.reports)} reports from {path} ({len(summary.malformed)} malformed)")
    return summary


def write_dataset(path: Union[str, Path], reports: Iterable[StackTrace]) -> int:
    """Write reports as native JSON lines; returns the count written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for report in reports:
            f.write(report.to_json())
            f.write("\n")
            count += 1
    return count


def append_dataset(path: Union[str, Path], reports: Iterable[StackTrace]) -> None:
    """Append reports to a native JSON-lines file."""
    with open(path, "a", encoding="utf-8") as f:
        for report in reports:
            f.write(report.to_json())
            f.write("\n")


def chronological_order(reports: Iterable[StackTrace]) -> List[StackTrace]:
    """Stable sort by ``(timestamp, report_id)``."""
    return sorted(reports, key=lambda r: (r.timestamp, r.report_id))


@dataclass(frozen=True)
class DatasetSplit:
    """Chronological train / validation / test partition."""
    train: Tuple[StackTrace, ...]
    validation: Tuple[StackTrace, ...]
    test: Tuple[StackTrace, ...]
    boundaries: Tuple[int, int]

    @property
    def history(self) -> Tuple[StackTrace, ...]:
        """Train and validation reports, the state test replay starts from."""
        return self.train + self.validation

    def sizes(self) -> Dict[str, int]:
        return {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)}


def chronological_split(
    reports: Sequence[StackTrace],
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
) -> DatasetSplit:
    """
    Split reports into contiguous train / validation / test segments by time.

    Segment sizes follow ``ratios`` by report count: train takes
    ``round(0.7 n)``, validation ``round(0.8 n) - round(0.7 n)`` and test the
    rest, each forced to hold at least one report.

    Args:
        reports: Reports in any order
        ratios: Train, validation and test proportions

    Returns:
        The split; boundaries are the first validation and first test timestamps
    """
    if not reports:
        raise EmptyInputError("cannot split an empty dataset")
    if len(reports) < 3:
        raise DataError(f"need at least 3 reports to form three splits, got {len(reports)}")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise DataError(f"invalid split ratios {tuple(ratios)}")

    ordered = chronological_order(reports)
    n = len(ordered)
    train_end = int(math.floor(ratios[0] * n + 0.5))
    val_end = int(math.floor((ratios[0] + ratios[1]) * n + 0.5))
    train_end = min(max(train_end, 1), n - 2)
    val_end = min(max(val_end, train_end + 1), n - 1)

    split = DatasetSplit(
        train=tuple(ordered[:train_end]),
        validation=tuple(ordered[train_end:val_end]),
        test=tuple(ordered[val_end:]),
        boundaries=(ordered[train_end].timestamp, ordered[val_end].timestamp),
    )
    logger.info(f"Chronological split sizes: {split.sizes()}")
    return split
