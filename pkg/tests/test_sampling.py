"""
Unit tests for training-pair, batch and triplet sampling.
"""

import itertools
import random
import sys
import unittest
from pathlib import Path

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from dedup.core.trace import StackTrace
from dedup.exceptions import DataError
from dedup.models.sampling import build_batches, group_unique, sample_training_pairs, sample_triplets


def reports_for(category, count, prefix=None):
    prefix = prefix or category
    return [StackTrace.build(f"{prefix}{i}", i, [f"{category}.f{i}", "common"], category_id=category)
            for i in range(count)]


def scan_batches(pairs, batch_size):
    """Repeated front-to-back scans, deferring pairs whose category is taken."""
    remaining, batches = list(pairs), []
    while remaining:
        batch, used, deferred = [], set(), []
        for pair in remaining:
            if len(batch) < batch_size and pair[0].category_id not in used:
                batch.append(pair)
                used.add(pair[0].category_id)
            else:
                deferred.append(pair)
        if len(batch) < 2:
            break
        batches.append(batch)
        remaining = deferred
    return batches


def ids(batches):
    return [[(a.report_id, b.report_id) for a, b in batch] for batch in batches]


class TestPairs(unittest.TestCase):
    """Test cases for anchor/positive sampling."""

    def test_all_pairs_below_cap(self):
        pairs = sample_training_pairs(reports_for("a", 3) + reports_for("b", 2), 10, seed=0)
        self.assertEqual(len(pairs), 3 + 1)
        self.assertTrue(all(p[0].category_id == p[1].category_id for p in pairs))
        self.assertTrue(all(p[0].report_id != p[1].report_id for p in pairs))

    def test_cap_is_exact(self):
        pairs = sample_training_pairs(reports_for("a", 10), 7, seed=0)
        self.assertEqual(len(pairs), 7)
        self.assertEqual(len({(a.report_id, b.report_id) for a, b in pairs}), 7)

    def test_duplicate_content_is_paired_once(self):
        dup = StackTrace.build("a9", 9, ["a.f0", "common"], category_id="a")
        groups = group_unique(reports_for("a", 2) + [dup])
        self.assertEqual([r.report_id for r in groups["a"]], ["a0", "a1"])

    def test_unlabelled_and_singletons(self):
        unlabelled = [StackTrace.build("u", 0, ["x"]), StackTrace.build("v", 1, ["y"])]
        with self.assertRaises(DataError):
            sample_training_pairs(unlabelled + reports_for("a", 1), 5, seed=0)

    def test_large_category_samples_exact_cap(self):
        pairs = sample_training_pairs(reports_for("a", 2000), 50, seed=4)
        keys = {(a.report_id, b.report_id) for a, b in pairs}
        self.assertEqual(len(pairs), 50)
        self.assertEqual(len(keys), 50)
        for a, b in pairs:
            self.assertLess(int(a.report_id[1:]), int(b.report_id[1:]))

    def test_matches_listing_every_pair(self):
        train = reports_for("a", 12) + reports_for("b", 5) + reports_for("c", 9)
        for seed in range(5):
            rng = random.Random(seed)
            expected = []
            for members in group_unique(train).values():
                candidates = list(itertools.combinations(range(len(members)), 2))
                if len(candidates) > 20:
                    candidates = rng.sample(candidates, 20)
                expected.extend((members[i].report_id, members[j].report_id) for i, j in candidates)
            rng.shuffle(expected)
            actual = [(a.report_id, b.report_id) for a, b in sample_training_pairs(train, 20, seed=seed)]
            self.assertEqual(actual, expected)

    def test_seeded(self):
        train = reports_for("a", 8) + reports_for("b", 8)
        first = [(a.report_id, b.report_id) for a, b in sample_training_pairs(train, 5, seed=3)]
        second = [(a.report_id, b.report_id) for a, b in sample_training_pairs(train, 5, seed=3)]
        self.assertEqual(first, second)


class TestBatches(unittest.TestCase):
    """Test cases for category-disjoint batching."""

    def test_no_category_repeats_within_a_batch(self):
        train = reports_for("a", 4) + reports_for("b", 4) + reports_for("c", 3)
        pairs = sample_training_pairs(train, 10, seed=0)
        batches = build_batches(pairs, 2)
        for batch in batches:
            categories = [p[0].category_id for p in batch]
            self.assertEqual(len(categories), len(set(categories)))
            self.assertGreaterEqual(len(batch), 2)
            self.assertLessEqual(len(batch), 2)

    def test_matches_sequential_scan(self):
        rng = random.Random(11)
        train = [r for c in "abcdefg" for r in reports_for(c, rng.randint(2, 7))]
        pairs = sample_training_pairs(train, 15, seed=2)
        for batch_size in (1, 2, 3, 5, 8):
            self.assertEqual(ids(build_batches(pairs, batch_size)), ids(scan_batches(pairs, batch_size)))

    def test_single_category_forms_no_batch(self):
        pairs = sample_training_pairs(reports_for("a", 4), 10, seed=0)
        self.assertEqual(build_batches(pairs, 8), [])


class TestTriplets(unittest.TestCase):
    """Test cases for negative sampling."""

    def test_negative_from_another_category(self):
        train = reports_for("a", 4) + reports_for("b", 3) + reports_for("c", 1)
        triplets = sample_triplets(train, 10, seed=0)
        self.assertEqual(len(triplets), 6 + 3)
        for anchor, positive, negative in triplets:
            self.assertEqual(anchor.category_id, positive.category_id)
            self.assertNotEqual(anchor.category_id, negative.category_id)

    def test_needs_two_categories(self):
        with self.assertRaises(DataError):
            sample_triplets(reports_for("a", 4), 10, seed=0)


if __name__ == "__main__":
    unittest.main()
