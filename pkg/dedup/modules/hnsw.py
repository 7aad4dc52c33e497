"""
Hierarchical navigable small-world graph over unit vectors.

Nodes are dense integer ids matching the insertion order of the owning
store; the graph never holds vectors itself, callers pass the current
vector matrix. Distance is ``1 - dot`` on L2-normalized rows.
"""

import heapq
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dedup.exceptions import StoreError

logger = logging.getLogger(__name__)


class SmallWorldGraph:
    """
    Layered proximity graph with incremental insertion.

    Args:
        m: Max neighbours per node on layers above 0 (layer 0 keeps ``2·m``)
        ef_construction: Candidate list size while inserting
        seed: Seed of the level generator
    """

    def __init__(self, m: int = 16, ef_construction: int = 200, seed: int = 7):
        if m < 2:
            raise StoreError("m must be at least 2")
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.seed = seed
        self.level_mult = 1.0 / math.log(m)
        self.rng = np.random.default_rng(seed)
        self.levels: List[int] = []
        self.links: List[List[List[int]]] = []
        self.entry_point: Optional[int] = None
        self.max_level = -1

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def params(self) -> Dict[str, int]:
        return {"m": self.m, "ef_construction": self.ef_construction, "seed": self.seed}

    def _random_level(self) -> int:
        return int(-math.log(1.0 - self.rng.random()) * self.level_mult)

    def _capacity(self, layer: int) -> int:
        return self.m0 if layer == 0 else self.m

    def _search_layer(self, query: np.ndarray, entry_points: Sequence[int], ef: int, layer: int,
                      vectors: np.ndarray) -> List[Tuple[float, int]]:
        """Best-first search on one layer; returns ``(distance, node)`` closest first."""
        visited = set(entry_points)
        entry = list(entry_points)
        dists = 1.0 - vectors[entry] @ query
        candidates = [(float(d), n) for d, n in zip(dists, entry)]
        heapq.heapify(candidates)
        best = [(-d, n) for d, n in candidates]
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)

        while candidates:
            dist, node = heapq.heappop(candidates)
            if len(best) >= ef and dist > -best[0][0]:
                break
            fresh = [n for n in self.links[node][layer] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            neighbor_dists = 1.0 - vectors[fresh] @ query
            for neighbor, d in zip(fresh, neighbor_dists):
                d = float(d)
                if len(best) < ef:
                    heapq.heappush(candidates, (d, neighbor))
                    heapq.heappush(best, (-d, neighbor))
                elif d < -best[0][0]:
                    heapq.heappush(candidates, (d, neighbor))
                    heapq.heappushpop(best, (-d, neighbor))
        return sorted((-d, n) for d, n in best)

    def _select_neighbors(self, candidates: List[Tuple[float, int]], m: int, vectors: np.ndarray) -> List[int]:
        """
        Diversity heuristic: keep a candidate only if it is closer to the
        base than to every neighbour already kept, then top up with the
        closest discarded ones.
        """
        ordered = sorted(candidates)
        if len(ordered) <= m:
            return [n for _, n in ordered]
        ids = [n for _, n in ordered]
        pairwise = 1.0 - vectors[ids] @ vectors[ids].T
        kept: List[int] = []
        discarded: List[int] = []
        for i, (dist, _) in enumerate(ordered):
            if len(kept) >= m:
                break
            if not kept or dist < pairwise[i, kept].min():
                kept.append(i)
            else:
                discarded.append(i)
        for i in discarded:
            if len(kept) >= m:
                break
            kept.append(i)
        return [ids[i] for i in kept]

    def _prune(self, node: int, layer: int, vectors: np.ndarray) -> None:
        neighbors = self.links[node][layer]
        if len(neighbors) <= self._capacity(layer):
            return
        dists = 1.0 - vectors[neighbors] @ vectors[node]
        candidates = [(float(d), n) for d, n in zip(dists, neighbors)]
        self.links[node][layer] = self._select_neighbors(candidates, self._capacity(layer), vectors)

    def insert(self, node: int, vectors: np.ndarray, level: Optional[int] = None) -> None:
        """
        Link ``node`` (the next dense id) into the graph.

        Args:
            node: Must equal ``len(self)``
            vectors: Matrix whose row ``node`` is the new vector
            level: Forced top layer, drawn at random when omitted
        """
        if node != len(self.levels):
            raise StoreError(f"graph expects node {len(self.levels)}, got {node}")
        level = self._random_level() if level is None else level
        self.levels.append(level)
        self.links.append([[] for _ in range(level + 1)])
        if self.entry_point is None:
            self.entry_point = node
            self.max_level = level
            return

        query = vectors[node]
        entry = [self.entry_point]
        for layer in range(self.max_level, level, -1):
            entry = [self._search_layer(query, entry, 1, layer, vectors)[0][1]]
        for layer in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(query, entry, self.ef_construction, layer, vectors)
            neighbors = self._select_neighbors(found, self.m, vectors)
            self.links[node][layer] = list(neighbors)
            for neighbor in neighbors:
                self.links[neighbor][layer].append(node)
                self._prune(neighbor, layer, vectors)
            entry = [n for _, n in found]

        if level > self.max_level:
            self.entry_point = node
            self.max_level = level

    def search(self, query: np.ndarray, k: int, ef: int, vectors: np.ndarray) -> List[Tuple[float, int]]:
        """Approximate ``k`` nearest nodes as ``(distance, node)`` closest first."""
        if self.entry_point is None:
            raise StoreError("search on an empty graph")
        entry = [self.entry_point]
        for layer in range(self.max_level, 0, -1):
            entry = [self._search_layer(query, entry, 1, layer, vectors)[0][1]]
        found = self._search_layer(query, entry, max(ef, k), 0, vectors)
        return found[:k]

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """Flatten adjacency into offset/neighbour arrays for persistence."""
        offsets = [0]
        flat: List[int] = []
        for node_links in self.links:
            for neighbors in node_links:
                flat.extend(neighbors)
                offsets.append(len(flat))
        return {
            "graph_levels": np.asarray(self.levels, dtype="<i8"),
            "graph_offsets": np.asarray(offsets, dtype="<i8"),
            "graph_neighbors": np.asarray(flat, dtype="<i8"),
        }

    @classmethod
    def from_arrays(cls, params: Dict[str, int], entry_point: Optional[int],
                    arrays: Dict[str, np.ndarray]) -> "SmallWorldGraph":
        graph = cls(m=params["m"], ef_construction=params["ef_construction"], seed=params["seed"])
        levels = arrays["graph_levels"].tolist()
        offsets = arrays["graph_offsets"].tolist()
        flat = arrays["graph_neighbors"].tolist()
        cursor = 0
        for level in levels:
            node_links = []
            for _ in range(level + 1):
                node_links.append(flat[offsets[cursor]:offsets[cursor + 1]])
                cursor += 1
            graph.links.append(node_links)
        graph.levels = levels
        graph.entry_point = entry_point
        graph.max_level = levels[entry_point] if entry_point is not None else -1
        # separate level stream for nodes added after loading
        graph.rng = np.random.default_rng([params["seed"], len(levels)])
        return graph

    def reachable(self) -> int:
        """Number of nodes reachable from the entry point on layer 0."""
        if self.entry_point is None:
            return 0
        seen = {self.entry_point}
        stack = [self.entry_point]
        while stack:
            for neighbor in self.links[stack.pop()][0]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    stack.append(neighbor)
        return len(seen)
