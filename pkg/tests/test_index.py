"""
Unit tests for the embedding store and the small-world graph.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from dedup.config.schema import IndexConfig
from dedup.exceptions import StoreError
from dedup.modules.hnsw import SmallWorldGraph
from dedup.modules.index import EmbeddingStore, category_scores


def unit_rows(n, dim, seed):
    rows = np.random.default_rng(seed).normal(size=(n, dim)).astype(np.float32)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestEmbeddingStore(unittest.TestCase):
    """Test cases for insertion and exact search."""

    def setUp(self):
        self.store = EmbeddingStore(3, IndexConfig(exact_threshold=100))

    def test_vectors_are_normalized(self):
        self.store.add("a", [3.0, 0.0, 4.0], "c1")
        np.testing.assert_allclose(self.store.vector_of("a"), [0.6, 0.0, 0.8], rtol=1e-6)
        self.assertEqual(self.store.category_of("a"), "c1")
        self.assertIn("a", self.store)

    def test_rejects_bad_entries(self):
        self.store.add("a", [1.0, 0.0, 0.0])
        with self.assertRaises(StoreError):
            self.store.add("a", [0.0, 1.0, 0.0])
        with self.assertRaises(StoreError):
            self.store.add("b", [1.0, 0.0])
        with self.assertRaises(StoreError):
            self.store.add("c", [0.0, 0.0, 0.0])
        self.assertEqual(len(self.store), 1)

    def test_empty_store(self):
        with self.assertRaises(StoreError):
            self.store.exact_search([1.0, 0.0, 0.0], 3)
        with self.assertRaises(StoreError):
            self.store.ann_search([1.0, 0.0, 0.0], 3)

    def test_exact_order_and_ties(self):
        self.store.add("far", [0.0, 1.0, 0.0])
        self.store.add("tie1", [1.0, 1.0, 0.0])
        self.store.add("best", [1.0, 0.0, 0.0])
        self.store.add("tie2", [1.0, 1.0, 0.0])
        hits = self.store.exact_search([1.0, 0.0, 0.0], 3)
        self.assertEqual([rid for rid, _ in hits], ["best", "tie1", "tie2"])
        self.assertAlmostEqual(hits[0][1], 1.0, places=6)
        self.assertEqual(len(self.store.exact_search([1.0, 0.0, 0.0], 10)), 4)

    def test_growth_keeps_rows(self):
        rows = unit_rows(40, 3, seed=0)
        for i, row in enumerate(rows):
            self.store.add(f"r{i}", row)
        np.testing.assert_allclose(self.store.vectors, rows, atol=1e-6)
        self.assertEqual(self.store.report_ids[-1], "r39")

    def test_prenormalized_rows_are_copied_exactly(self):
        store = EmbeddingStore(16, IndexConfig())
        for i, row in enumerate(unit_rows(50, 16, seed=11) * 3.0):
            store.add(f"r{i}", row)
        for i in range(50):
            store.add(f"copy{i}", store.vector_of(f"r{i}"), normalized=True)
        for i in range(50):
            np.testing.assert_array_equal(store.vector_of(f"copy{i}"), store.vector_of(f"r{i}"))
        with self.assertRaises(StoreError):
            store.add("zero", np.zeros(16), normalized=True)

    def test_set_category(self):
        self.store.add("a", [1.0, 0.0, 0.0])
        self.store.set_category("a", "new-0")
        self.assertEqual(self.store.category_map(), {"a": "new-0"})

    def test_unknown_mode(self):
        self.store.add("a", [1.0, 0.0, 0.0])
        with self.assertRaises(StoreError):
            self.store.search([1.0, 0.0, 0.0], 1, mode="fuzzy")


class TestApproximateSearch(unittest.TestCase):
    """Test cases for graph search against the exhaustive scan."""

    @classmethod
    def setUpClass(cls):
        cls.rows = unit_rows(1000, 32, seed=1)
        cls.store = EmbeddingStore(32, IndexConfig(m=12, ef_construction=80, ef_search=128, exact_threshold=500))
        for i, row in enumerate(cls.rows):
            cls.store.add(f"r{i}", row, f"c{i % 50}")
        cls.store.build_graph()

    def test_recall_against_exact(self):
        queries = unit_rows(40, 32, seed=2)
        recalls = []
        for query in queries:
            exact = {rid for rid, _ in self.store.exact_search(query, 10)}
            approx = {rid for rid, _ in self.store.ann_search(query, 10)}
            recalls.append(len(exact & approx) / 10)
        self.assertGreaterEqual(float(np.mean(recalls)), 0.9)

    def test_auto_mode_uses_graph_above_threshold(self):
        hits = self.store.search(self.rows[3], 5)
        self.assertEqual(hits[0][0], "r3")
        scores = [s for _, s in hits]
        self.assertEqual(scores, sorted(scores, reverse=True))

    def test_incremental_insert_is_searchable(self):
        store = EmbeddingStore(32, IndexConfig(m=8, ef_construction=40, ef_search=64))
        for i, row in enumerate(self.rows[:200]):
            store.add(f"r{i}", row)
        store.build_graph()
        extra = unit_rows(5, 32, seed=9)
        for i, row in enumerate(extra):
            store.add(f"x{i}", row)
        self.assertEqual(len(store.graph), 205)
        for i, row in enumerate(extra):
            self.assertEqual(store.ann_search(row, 1)[0][0], f"x{i}")

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "index.bin"
            self.store.save(path)
            loaded = EmbeddingStore.load(path)
        np.testing.assert_array_equal(loaded.vectors, self.store.vectors)
        self.assertEqual(loaded.category_map(), self.store.category_map())
        self.assertEqual(loaded.config.m, 12)
        query = unit_rows(1, 32, seed=3)[0]
        self.assertEqual(loaded.ann_search(query, 10), self.store.ann_search(query, 10))
        self.assertEqual(loaded.exact_search(query, 10), self.store.exact_search(query, 10))


def brute_force_top_k(rows, query, k):
    """Per-row float64 dot products, ranked by a stable sort on descending score."""
    query = np.asarray(query, dtype=np.float32)
    unit = (query / float(np.linalg.norm(query))).astype(np.float64)
    scores = [np.float32(np.dot(row.astype(np.float64), unit)) for row in rows]
    order = sorted(range(len(rows)), key=lambda i: -scores[i])
    return [(i, float(scores[i])) for i in order[:k]]


class TestSearchAgainstBruteForce(unittest.TestCase):
    """Test cases comparing both search modes with a brute-force ranking."""

    @classmethod
    def setUpClass(cls):
        rng = np.random.default_rng(21)
        base = unit_rows(900, 100, seed=20)
        duplicated = rng.choice(900, size=100, replace=False)
        cls.rows = np.concatenate([base, base[duplicated]])
        cls.store = EmbeddingStore(100, IndexConfig(m=12, ef_construction=80, ef_search=128, exact_threshold=10))
        for i, row in enumerate(cls.rows):
            cls.store.add(f"r{i}", row)
        near = base[duplicated[:50]] + rng.normal(scale=0.05, size=(50, 100)).astype(np.float32)
        cls.queries = np.concatenate([unit_rows(50, 100, seed=22), near])

    def test_exact_matches_brute_force_with_ties(self):
        stored = self.store.vectors
        tied_queries = 0
        for query in self.queries:
            expected = brute_force_top_k(stored, query, 10)
            hits = self.store.exact_search(query, 10)
            self.assertEqual([rid for rid, _ in hits], [f"r{i}" for i, _ in expected])
            self.assertEqual([score for _, score in hits], [score for _, score in expected])
            if expected[0][1] == expected[1][1]:
                tied_queries += 1
                self.assertLess(int(hits[0][0][1:]), int(hits[1][0][1:]))
        self.assertGreaterEqual(tied_queries, 40)

    def test_graph_recall_against_brute_force(self):
        stored = self.store.vectors
        recalls = []
        for query in self.queries:
            expected = brute_force_top_k(stored, query, 10)
            cutoff = expected[-1][1] - 1e-6
            approx = self.store.ann_search(query, 10)
            recalls.append(sum(score >= cutoff for _, score in approx) / 10)
        self.assertGreaterEqual(float(np.mean(recalls)), 0.9)


class TestSmallWorldGraph(unittest.TestCase):
    """Test cases for graph bookkeeping."""

    def test_insert_order_and_empty_search(self):
        graph = SmallWorldGraph(m=4, ef_construction=10)
        with self.assertRaises(StoreError):
            graph.search(np.ones(2), 1, 5, np.ones((1, 2)))
        with self.assertRaises(StoreError):
            graph.insert(1, np.ones((2, 2)))
        with self.assertRaises(StoreError):
            SmallWorldGraph(m=1)

    def test_degree_bounds(self):
        rows = unit_rows(300, 8, seed=4)
        graph = SmallWorldGraph(m=4, ef_construction=20, seed=0)
        for node in range(len(rows)):
            graph.insert(node, rows)
        for node_links in graph.links:
            self.assertLessEqual(len(node_links[0]), 8)
            for neighbors in node_links[1:]:
                self.assertLessEqual(len(neighbors), 4)
        self.assertEqual(graph.max_level, graph.levels[graph.entry_point])
        self.assertEqual(graph.max_level, max(graph.levels))

    def test_forced_levels_and_arrays(self):
        rows = unit_rows(4, 3, seed=5)
        graph = SmallWorldGraph(m=2, ef_construction=4)
        for node, level in enumerate([0, 2, 1, 0]):
            graph.insert(node, rows, level=level)
        self.assertEqual(graph.entry_point, 1)
        restored = SmallWorldGraph.from_arrays(graph.params, graph.entry_point, graph.to_arrays())
        self.assertEqual(restored.links, graph.links)
        self.assertEqual(restored.levels, graph.levels)
        self.assertEqual(restored.max_level, 2)
        self.assertEqual(restored.reachable(), 4)


class TestCategoryScores(unittest.TestCase):
    """Test cases for collapsing report hits into categories."""

    def test_best_member_and_tie_order(self):
        hits = [("r1", 0.9), ("r2", 0.7), ("r3", 0.7), ("r4", 0.2)]
        categories = {"r1": "a", "r2": "b", "r3": "c", "r4": "a"}
        self.assertEqual(category_scores(hits, categories), [("a", 0.9), ("b", 0.7), ("c", 0.7)])


if __name__ == "__main__":
    unittest.main()
