"""
Unit tests for the TF-IDF and string-matching baselines.
"""

import math
import random
import sys
import unittest
from pathlib import Path

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from dedup.core.trace import StackTrace
from dedup.exceptions import StoreError
from dedup.modules.baselines import (
    TfIdfIndex,
    edit_similarity,
    lcs_length,
    lcs_similarity,
    lerch_score,
    levenshtein,
    prefix_similarity,
)


def dp_levenshtein(a, b):
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        prev, row[0] = row[0], i
        for j, y in enumerate(b, start=1):
            prev, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev + (x != y))
    return row[-1]


def dp_lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a, start=1):
        for j, y in enumerate(b, start=1):
            table[i][j] = table[i - 1][j - 1] + 1 if x == y else max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


class TestLerch(unittest.TestCase):
    """Test cases for the TF-IDF frame score."""

    def setUp(self):
        self.index = TfIdfIndex()
        self.index.add("d1", ["a", "b"])
        self.index.add("d2", ["b", "c"])

    def test_single_rare_frame(self):
        self.assertAlmostEqual(lerch_score(["a"], ["a", "b"], self.index), math.log(2) ** 2)

    def test_frame_in_every_document_scores_zero(self):
        self.assertEqual(lerch_score(["b"], ["a", "b"], self.index), 0.0)

    def test_term_frequency_counts_document_repeats_only(self):
        index = TfIdfIndex()
        index.add("d1", ["a", "a", "x"])
        index.add("d2", ["b", "x"])
        self.assertAlmostEqual(lerch_score(["a", "a"], ["a", "a", "x"], index), 2 * math.log(2) ** 2)

    def test_rank_uses_inverted_index(self):
        ranked = self.index.rank(["a", "a", "b"])
        self.assertEqual(ranked[0][0], "d1")
        self.assertAlmostEqual(ranked[0][1], math.log(2) ** 2)
        self.assertEqual(ranked[1], ("d2", 0.0))
        self.assertEqual(self.index.rank(["zzz"]), [])

    def test_incremental_equals_batch(self):
        corpus = [StackTrace.build(f"r{i}", i, [f"f{i % 3}", f"g{i % 2}", "h"]) for i in range(6)]
        batch = TfIdfIndex.from_corpus(corpus)
        incremental = TfIdfIndex()
        for trace in corpus:
            incremental.add(trace.report_id, trace.frame_keys)
        self.assertEqual(batch.df, incremental.df)
        self.assertEqual(batch.rank(corpus[0]), incremental.rank(corpus[0]))

    def test_errors(self):
        with self.assertRaises(StoreError):
            self.index.add("d1", ["z"])
        empty = TfIdfIndex()
        with self.assertRaises(StoreError):
            empty.idf("a")
        with self.assertRaises(StoreError):
            lerch_score(["a"], ["a"], empty)
        with self.assertRaises(StoreError):
            empty.rank(["a"])

    def test_unknown_frame_idf(self):
        self.assertAlmostEqual(self.index.idf("never"), math.log(2))


class TestStringSimilarities(unittest.TestCase):
    """Test cases for edit distance, LCS and prefix similarity."""

    def test_levenshtein_examples(self):
        self.assertEqual(levenshtein(list("kitten"), list("sitting")), 3)
        self.assertEqual(levenshtein([], ["a", "b"]), 2)
        self.assertEqual(levenshtein(["a"], []), 1)
        self.assertEqual(levenshtein(["a", "b"], ["a", "b"]), 0)

    def test_levenshtein_matches_dynamic_programming(self):
        rng = random.Random(0)
        for _ in range(200):
            a = [rng.choice("abcd") for _ in range(rng.randint(0, 70))]
            b = [rng.choice("abcd") for _ in range(rng.randint(0, 70))]
            self.assertEqual(levenshtein(a, b), dp_levenshtein(a, b), (a, b))

    def test_lcs_matches_dynamic_programming(self):
        rng = random.Random(1)
        for _ in range(200):
            a = [rng.choice("abcde") for _ in range(rng.randint(0, 70))]
            b = [rng.choice("abcde") for _ in range(rng.randint(0, 70))]
            self.assertEqual(lcs_length(a, b), dp_lcs(a, b), (a, b))

    def test_similarities_on_traces(self):
        q = StackTrace.build("q", 0, ["a", "b", "c", "d"])
        d = StackTrace.build("d", 0, ["a", "b", "x"])
        self.assertAlmostEqual(edit_similarity(q, d), 0.5)
        self.assertAlmostEqual(lcs_similarity(q, d), 0.5)
        self.assertAlmostEqual(prefix_similarity(q, d), 0.5)
        self.assertEqual(edit_similarity(q, q), 1.0)
        self.assertEqual(prefix_similarity([], []), 1.0)

    def test_line_numbers_do_not_matter(self):
        q = StackTrace.build("q", 0, ["a.B.f(B.java:1)", "a.C.g(C.java:2)"])
        d = StackTrace.build("d", 0, ["a.B.f(B.java:7)", "a.C.g(C.java:9)"])
        self.assertEqual(levenshtein(q, d), 0)


if __name__ == "__main__":
    unittest.main()
