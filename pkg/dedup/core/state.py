"""
State directory layout, category store and the writer lock.

Layout::

    config.yaml        effective configuration snapshot
    dataset.jsonl      ingested native dataset
    history.jsonl      reports known to the online engine
    vocab.json         BPE vocabulary
    embedder.weights   embedding model
    reranker.weights   reranker (absent with --no-reranker)
    index.bin          embedding store
    categories.jsonl   category store
    threshold.json     calibrated decision threshold
    ablation/          embedder weights per aggregation mode
    eval/              metrics reports
"""

import json
import logging
import os
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

from dedup.core.trace import ContentHash, StackTrace, content_hash
from dedup.exceptions import ArtifactError, MissingArtifactError, StateLockedError, VersionMismatchError

logger = logging.getLogger(__name__)

CATEGORIES_VERSION = 1
THRESHOLD_VERSION = 1

TRAINING_ARTIFACTS = (
    "config.yaml", "history.jsonl", "vocab.json", "embedder.weights", "reranker.weights",
    "index.bin", "categories.jsonl", "threshold.json",
)


class StateDir:
    """Paths and small artifacts of one state directory."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    @property
    def config_path(self) -> Path:
        return self.root / "config.yaml"

    @property
    def dataset_path(self) -> Path:
        return self.root / "dataset.jsonl"

    @property
    def history_path(self) -> Path:
        return self.root / "history.jsonl"

    @property
    def vocab_path(self) -> Path:
        return self.root / "vocab.json"

    @property
    def embedder_path(self) -> Path:
        return self.root / "embedder.weights"

    @property
    def reranker_path(self) -> Path:
        return self.root / "reranker.weights"

    @property
    def index_path(self) -> Path:
        return self.root / "index.bin"

    @property
    def categories_path(self) -> Path:
        return self.root / "categories.jsonl"

    @property
    def threshold_path(self) -> Path:
        return self.root / "threshold.json"

    @property
    def ablation_dir(self) -> Path:
        return self.root / "ablation"

    @property
    def eval_dir(self) -> Path:
        return self.root / "eval"

    @property
    def lock_path(self) -> Path:
        return self.root / ".lock"

    def ensure(self) -> "StateDir":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    def require(self, *paths: Path) -> None:
        """Raise MissingArtifactError naming every absent path."""
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise MissingArtifactError(f"missing artifacts: {', '.join(missing)}")

    def remove_training_artifacts(self) -> None:
        """Delete everything cmd_train writes, leaving the dataset alone."""
        for name in TRAINING_ARTIFACTS:
            path = self.root / name
            if path.exists():
                path.unlink()
        if self.ablation_dir.exists():
            for path in self.ablation_dir.iterdir():
                path.unlink()
            self.ablation_dir.rmdir()

    @contextmanager
    def lock(self) -> Iterator[None]:
        """Exclusive writer lock held for the duration of a command."""
        self.ensure()
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            raise StateLockedError(
                f"{self.root} is locked by another command (remove {self.lock_path} if stale)"
            ) from e
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield
        finally:
            if self.lock_path.exists():
                self.lock_path.unlink()

    def save_thresholds(self, thresholds: Dict[str, Dict[str, Optional[float]]]) -> None:
        """Persist ``{variant: {"threshold": T, "f1": F1}}``."""
        data = {"version": THRESHOLD_VERSION, "thresholds": thresholds}
        with open(self.threshold_path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)

    def load_threshold(self, variant: str) -> float:
        """Calibrated threshold of a pipeline variant."""
        self.require(self.threshold_path)
        with open(self.threshold_path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if data.get("version") != THRESHOLD_VERSION:
            raise VersionMismatchError(f"{self.threshold_path} has version {data.get('version')}")
        entry = data["thresholds"].get(variant)
        if entry is None:
            raise MissingArtifactError(f"no threshold calibrated for '{variant}' in {self.threshold_path}")
        return float(entry["threshold"])


@dataclass
class CategoryRecord:
    category_id: str
    report_ids: List[str] = field(default_factory=list)
    content_hashes: List[str] = field(default_factory=list)
    created_by: str = "human"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "category_id": self.category_id,
            "report_ids": self.report_ids,
            "content_hashes": self.content_hashes,
            "created_by": self.created_by,
        }


class CategoryStore:
    """Category membership with a content-hash lookup for exact duplicates."""

    def __init__(self):
        self.categories: "OrderedDict[str, CategoryRecord]" = OrderedDict()
        self._by_hash: Dict[str, str] = {}
        self._first_report: Dict[str, str] = {}
        self._by_report: Dict[str, str] = {}

    def __len__(self) -> int:
        return len(self.categories)

    def __contains__(self, category_id: str) -> bool:
        return category_id in self.categories

    @classmethod
    def from_reports(cls, reports: Iterable[StackTrace], created_by: str = "human") -> "CategoryStore":
        store = cls()
        for report in reports:
            if report.category_id is None:
                continue
            if report.category_id not in store.categories:
                store.categories[report.category_id] = CategoryRecord(report.category_id, created_by=created_by)
            store.attach(report.category_id, report.report_id, content_hash(report))
        return store

    def category_for_hash(self, digest: ContentHash) -> Optional[str]:
        return self._by_hash.get(digest.hex)

    def report_for_hash(self, digest: ContentHash) -> Optional[str]:
        """First stored report with this content."""
        return self._first_report.get(digest.hex)

    def category_of(self, report_id: str) -> Optional[str]:
        return self._by_report.get(report_id)

    def attach(self, category_id: str, report_id: str, digest: ContentHash) -> None:
        record = self.categories.get(category_id)
        if record is None:
            raise ArtifactError(f"unknown category '{category_id}'")
        record.report_ids.append(report_id)
        record.content_hashes.append(digest.hex)
        self._by_hash.setdefault(digest.hex, category_id)
        self._first_report.setdefault(digest.hex, report_id)
        self._by_report[report_id] = category_id

    def create(self, report_id: str, digest: ContentHash, created_by: str = "engine") -> str:
        """Open a ``new-<n>`` category holding ``report_id``."""
        n = len(self.categories)
        while f"new-{n}" in self.categories:
            n += 1
        category_id = f"new-{n}"
        self.categories[category_id] = CategoryRecord(category_id, created_by=created_by)
        self.attach(category_id, report_id, digest)
        return category_id

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"version": CATEGORIES_VERSION, "kind": "categories"}) + "\n")
            for record in self.categories.values():
                f.write(json.dumps(record.to_dict()) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CategoryStore":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"Artifact not found: {path}")
        store = cls()
        with open(path, "r", encoding="utf-8") as f:
            header = json.loads(f.readline() or "{}")
            if header.get("kind") != "categories":
                raise ArtifactError(f"{path} is not a category store")
            if header.get("version") != CATEGORIES_VERSION:
                raise VersionMismatchError(f"{path} has version {header.get('version')}")
            for line in f:
                if not line.strip():
                    continue
                data = json.loads(line)
                record = CategoryRecord(data["category_id"], created_by=data.get("created_by", "human"))
                store.categories[record.category_id] = record
                for report_id, digest in zip(data["report_ids"], data["content_hashes"]):
                    store.attach(record.category_id, report_id, ContentHash.from_hex(digest))
        return store
