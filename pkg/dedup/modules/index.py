"""
Embedding store with exact and small-world graph top-K retrieval.

Vectors are L2-normalized on insertion so inner product equals cosine for
both search modes.
"""

import logging
import threading
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from dedup.config.schema import IndexConfig
from dedup.exceptions import StoreError
from dedup.modules.hnsw import SmallWorldGraph
from dedup.utils.container import read_container, write_container

INDEX_VERSION = 1
Hit = Tuple[str, float]


def category_scores(hits: Sequence[Hit], category_of: Mapping[str, str]) -> List[Tuple[str, float]]:
    """
    Collapse report hits into category scores.

    Args:
        hits: ``(report_id, similarity)`` sorted by descending similarity
        category_of: Report to category lookup

    Returns:
        ``(category_id, best member similarity)`` sorted descending; equal
        scores keep the order of each category's best hit
    """
    best: Dict[str, Tuple[float, int]] = {}
    for rank, (report_id, score) in enumerate(hits):
        category = category_of[report_id]
        current = best.get(category)
        if current is None or score > current[0]:
            best[category] = (float(score), current[1] if current else rank)
    ordered = sorted(best.items(), key=lambda item: (-item[1][0], item[1][1]))
    return [(category, score) for category, (score, _) in ordered]


class EmbeddingStore:
    """
    Append-only store of report vectors.

    Any number of readers may search concurrently; writes take the store
    lock.

    Args:
        dim: Vector width
        config: Graph parameters and the auto-mode threshold
    """

    def __init__(self, dim: int, config: Optional[IndexConfig] = None):
        if dim < 1:
            raise StoreError("dim must be positive")
        self.dim = dim
        self.config = config or IndexConfig()
        self.logger = logging.getLogger(__name__)
        self._lock = threading.RLock()
        self._vectors = np.zeros((16, dim), dtype=np.float32)
        self._ids: List[str] = []
        self._categories: List[Optional[str]] = []
        self._position: Dict[str, int] = {}
        self.graph: Optional[SmallWorldGraph] = None

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, report_id: str) -> bool:
        return report_id in self._position

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors[:len(self._ids)]

    @property
    def report_ids(self) -> List[str]:
        return list(self._ids)

    def category_of(self, report_id: str) -> Optional[str]:
        return self._categories[self._position[report_id]]

    def vector_of(self, report_id: str) -> np.ndarray:
        return self._vectors[self._position[report_id]].copy()

    def category_map(self) -> Dict[str, Optional[str]]:
        return dict(zip(self._ids, self._categories))

    def _normalize(self, vector: Union[np.ndarray, Sequence[float]], rescale: bool = True) -> np.ndarray:
        vector = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vector.shape[0] != self.dim:
            raise StoreError(f"vector width {vector.shape[0]} does not match store dim {self.dim}")
        norm = float(np.linalg.norm(vector))
        if norm == 0.0 or not np.isfinite(norm):
            raise StoreError("cannot store a zero or non-finite vector")
        return vector / norm if rescale else vector

    def add(
        self, report_id: str, vector, category_id: Optional[str] = None, normalized: bool = False
    ) -> None:
        """Append one entry; the graph, if built, is updated in place.

        With ``normalized`` the row is stored as given, so a row read back
        through ``vector_of`` is copied bit for bit.
        """
        unit = self._normalize(vector, rescale=not normalized)
        with self._lock:
            if report_id in self._position:
                raise StoreError(f"duplicate report_id '{report_id}'")
            n = len(self._ids)
            if n == self._vectors.shape[0]:
                grown = np.zeros((2 * n, self.dim), dtype=np.float32)
                grown[:n] = self._vectors[:n]
                self._vectors = grown
            self._vectors[n] = unit
            self._ids.append(report_id)
            self._categories.append(category_id)
            self._position[report_id] = n
            if self.graph is not None:
                self.graph.insert(n, self._vectors)

    def add_many(self, entries: Iterable[Tuple[str, np.ndarray, Optional[str]]]) -> None:
        for report_id, vector, category_id in entries:
            self.add(report_id, vector, category_id)

    def set_category(self, report_id: str, category_id: str) -> None:
        with self._lock:
            self._categories[self._position[report_id]] = category_id

    def build_graph(self) -> SmallWorldGraph:
        """Build the small-world graph over every stored vector."""
        with self._lock:
            if self.graph is None or len(self.graph) != len(self._ids):
                graph = SmallWorldGraph(self.config.m, self.config.ef_construction, self.config.seed)
                for node in range(len(self._ids)):
                    graph.insert(node, self._vectors)
                self.graph = graph
                self.logger.info(f"Built small-world graph over {len(self._ids)} vectors")
            return self.graph

    def exact_search(self, query, k: int) -> List[Hit]:
        """Exhaustive cosine scan; equal scores keep insertion order."""
        if not self._ids:
            raise StoreError("search on an empty store")
        unit = self._normalize(query)
        # float64 accumulation so identical rows always score identically
        scores = (self.vectors.astype(np.float64) @ unit.astype(np.float64)).astype(np.float32)
        order = np.argsort(-scores, kind="stable")[:max(k, 0)]
        return [(self._ids[i], float(scores[i])) for i in order]

    def ann_search(self, query, k: int, ef: Optional[int] = None) -> List[Hit]:
        """Approximate top-K through the graph, building it on first use."""
        if not self._ids:
            raise StoreError("search on an empty store")
        unit = self._normalize(query)
        graph = self.build_graph()
        found = graph.search(unit, min(k, len(self._ids)), ef or self.config.ef_search, self.vectors)
        hits = [(self._ids[node], float(1.0 - dist)) for dist, node in found]
        return sorted(hits, key=lambda h: (-h[1], self._position[h[0]]))

    def search(self, query, k: int, mode: str = "auto") -> List[Hit]:
        """Exact below ``exact_threshold`` entries, graph search above, unless forced."""
        if mode == "exact" or (mode == "auto" and len(self._ids) < self.config.exact_threshold):
            return self.exact_search(query, k)
        if mode in ("ann", "auto"):
            return self.ann_search(query, k)
        raise StoreError(f"unknown search mode '{mode}'")

    def save(self, path: Union[str, Path]) -> None:
        metadata = {
            "dim": self.dim,
            "count": len(self._ids),
            "ann_params": {"m": self.config.m, "ef_construction": self.config.ef_construction,
                           "ef_search": self.config.ef_search, "seed": self.config.seed},
            "report_ids": self._ids,
            "categories": self._categories,
            "entry_point": self.graph.entry_point if self.graph else None,
            "has_graph": self.graph is not None,
        }
        arrays = {"vectors": self.vectors}
        if self.graph is not None:
            arrays.update(self.graph.to_arrays())
        write_container(path, kind="index", metadata=metadata, arrays=arrays, version=INDEX_VERSION)
        self.logger.info(f"Saved index with {len(self._ids)} vectors to {path}")

    @classmethod
    def load(cls, path: Union[str, Path], config: Optional[IndexConfig] = None) -> "EmbeddingStore":
        metadata, arrays = read_container(path, kind="index", version=INDEX_VERSION)
        params = metadata["ann_params"]
        if config is None:
            config = IndexConfig(**params)
        store = cls(metadata["dim"], config)
        vectors = arrays["vectors"].astype(np.float32)
        store._vectors = np.zeros((max(16, 2 * len(vectors)), store.dim), dtype=np.float32)
        store._vectors[:len(vectors)] = vectors
        store._ids = list(metadata["report_ids"])
        store._categories = list(metadata["categories"])
        store._position = {rid: i for i, rid in enumerate(store._ids)}
        if metadata.get("has_graph"):
            store.graph = SmallWorldGraph.from_arrays(params, metadata["entry_point"], arrays)
        return store
