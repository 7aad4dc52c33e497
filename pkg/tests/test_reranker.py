"""
Unit tests for the cross-encoder reranker.
"""

import math
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import torch

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from dedup.config.schema import RerankerConfig
from dedup.core.dataset import chronological_split
from dedup.core.synthetic import generate_dataset
from dedup.exceptions import ModelError
from dedup.models.nn import finite_difference_check, set_seed
from dedup.models.reranker import (
    RerankerModel,
    bce_from_scores,
    bce_triplet_loss,
    decide,
    mark_shared_frames,
    rerank,
    score_pair,
    train_reranker,
    triplet_accuracy,
)
from dedup.modules.tokenizer import TokenizedTrace, TraceTokenizer, train_bpe


def tokenized(rid, *frames):
    ids = tuple((2 + (sum(map(ord, f)) % 7),) for f in frames)
    return TokenizedTrace(frames=ids, frame_keys=tuple(frames), report_id=rid)


def silence(model):
    """Zero the output layer so every pair scores exactly 0."""
    with torch.no_grad():
        model.mlp.layers[-1].weight.zero_()
        model.mlp.layers[-1].bias.zero_()


class TestSharedFrames(unittest.TestCase):
    """Test cases for shared-frame marking."""

    def test_flags(self):
        q = tokenized("q", "a", "b", "a")
        k = tokenized("k", "c", "a")
        self.assertEqual(mark_shared_frames(q, k), ([True, False, True], [False, True]))

    def test_empty_trace(self):
        with self.assertRaises(ModelError):
            mark_shared_frames(TokenizedTrace(frames=(), frame_keys=()), tokenized("k", "a"))


class TestScoring(unittest.TestCase):
    """Test cases for pair scoring and the BCE loss."""

    def setUp(self):
        set_seed(0)
        self.model = RerankerModel(12, d_tok=6, hidden_dim=5, mlp_hidden=[8])
        self.q = tokenized("q", "a", "b", "c")
        self.k = tokenized("k", "b", "d")
        self.far = tokenized("f", "x", "y")

    def test_zero_significance_is_plain_concatenation(self):
        with torch.no_grad():
            vectors = self.model.encoder([self.q, self.k])
            expected = float(self.model.mlp(torch.cat([vectors[0], vectors[1]]))[0])
        self.assertAlmostEqual(score_pair(self.q, self.k, self.model), expected, places=5)

    def test_significance_only_touches_shared_frames(self):
        before_shared = score_pair(self.q, self.k, self.model)
        before_disjoint = score_pair(self.q, self.far, self.model)
        with torch.no_grad():
            self.model.significance.fill_(0.5)
        self.assertNotAlmostEqual(score_pair(self.q, self.k, self.model), before_shared, places=6)
        self.assertAlmostEqual(score_pair(self.q, self.far, self.model), before_disjoint, places=6)

    def test_bce_closed_form(self):
        zero = torch.zeros(1)
        self.assertAlmostEqual(float(bce_from_scores(zero, zero)), 2 * math.log(2), places=6)
        silence(self.model)
        loss = bce_triplet_loss((self.q, self.k, self.far), self.model)
        self.assertAlmostEqual(float(loss), 2 * math.log(2), places=6)

    def test_bce_gradients(self):
        p = torch.randn(4, dtype=torch.float64, requires_grad=True)
        n = torch.randn(4, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(bce_from_scores, (p, n)))

    def test_triplet_accuracy_counts_strict_wins(self):
        silence(self.model)
        self.assertEqual(triplet_accuracy(self.model, [(self.q, self.k, self.far)]), 0.0)
        self.assertEqual(triplet_accuracy(self.model, []), 0.0)

    def test_save_and_load(self):
        with torch.no_grad():
            self.model.significance.fill_(0.25)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "reranker.weights"
            self.model.save(path)
            loaded = RerankerModel.load(path)
        self.assertEqual(loaded.hyperparameters["mlp_hidden"], [8])
        self.assertAlmostEqual(score_pair(self.q, self.k, loaded), score_pair(self.q, self.k, self.model), places=6)

    def test_parallel_lists_must_match(self):
        with self.assertRaises(ModelError):
            self.model.score_pairs([self.q], [self.k, self.far])


class TestParameterGradients(unittest.TestCase):
    """Test cases for autograd against central differences through encoder, significance and MLP."""

    def test_triplet_loss_parameter_gradients(self):
        set_seed(6)
        model = RerankerModel(12, d_tok=4, hidden_dim=3, mlp_hidden=[5]).double()
        with torch.no_grad():
            model.significance.copy_(torch.linspace(-0.5, 0.5, model.significance.numel(), dtype=torch.float64))

        def trace(rid, *frames):
            return TokenizedTrace(frames=tuple(frames), frame_keys=tuple(str(f) for f in frames), report_id=rid)

        anchor = trace("q", (2, 3), (4,), (5, 6))
        positive = trace("p", (4,), (2, 3), (7,))
        negative = trace("n", (5, 6), (8, 9), (10,))
        used = [2, 3, 4, 5, 6, 7, 8, 9, 10]

        rng = np.random.default_rng(1)
        coordinates = {}
        for name, param in model.named_parameters():
            if name == "encoder.token_embedding.weight":
                pool = np.array([row * param.shape[1] + col for row in used for col in range(param.shape[1])])
            else:
                pool = np.arange(param.numel())
            picks = len(pool) if name == "significance" else 6
            coordinates[name] = rng.choice(pool, size=min(picks, len(pool)), replace=False).tolist()
        self.assertGreaterEqual(sum(len(v) for v in coordinates.values()), 50)
        self.assertEqual(len(coordinates["significance"]), model.significance.numel())
        self.assertIn("mlp.layers.0.weight", coordinates)

        mismatches = finite_difference_check(
            model, lambda: bce_triplet_loss((anchor, positive, negative), model), coordinates
        )
        self.assertEqual(mismatches, [])
        self.assertTrue(torch.any(model.significance.grad != 0))
        self.assertTrue(torch.any(model.mlp.layers[0].weight.grad != 0))


class TestRerankAndDecide(unittest.TestCase):
    """Test cases for reordering and thresholding."""

    def setUp(self):
        set_seed(1)
        self.model = RerankerModel(12, d_tok=4, hidden_dim=3, mlp_hidden=[4])
        self.q = tokenized("q", "a")
        self.candidates = [(rid, tokenized(rid, rid)) for rid in ["r1", "r2", "r3"]]

    def test_sorted_by_descending_score(self):
        scores = {"r1": 0.1, "r2": 0.9, "r3": 0.5}
        with patch("dedup.models.reranker.score_pair", side_effect=lambda q, k, m: scores[k.report_id]):
            ranked = rerank(self.q, self.candidates, self.model)
        self.assertEqual([rid for rid, _ in ranked], ["r2", "r3", "r1"])

    def test_ties_keep_retrieval_order(self):
        silence(self.model)
        ranked = rerank(self.q, self.candidates, self.model)
        self.assertEqual([rid for rid, _ in ranked], ["r1", "r2", "r3"])

    def test_empty_candidates(self):
        with self.assertRaises(ModelError):
            rerank(self.q, [], self.model)

    def test_threshold_is_strict(self):
        categories = {"r1": "c1", "r2": "c2"}
        attach = decide([("r2", 0.8), ("r1", 0.1)], 0.5, categories)
        self.assertTrue(attach.attach)
        self.assertEqual(attach.category_id, "c2")
        self.assertEqual(attach.report_id, "r2")
        equal = decide([("r2", 0.5)], 0.5, categories)
        self.assertFalse(equal.attach)
        self.assertIsNone(equal.category_id)
        self.assertEqual(equal.score, 0.5)
        with self.assertRaises(ModelError):
            decide([], 0.5, categories)


class TestTrainReranker(unittest.TestCase):
    """Test cases for reranker training."""

    @classmethod
    def setUpClass(cls):
        reports = generate_dataset(n_categories=6, reports_per_category=8, vocabulary_size=60,
                                   min_frames=4, max_frames=6, seed=2)
        cls.split = chronological_split(reports)
        cls.tokenizer = TraceTokenizer(train_bpe(cls.split.train, 120), max_frames=8, max_tokens_per_frame=6)

    def test_runs_and_selects(self):
        config = RerankerConfig(d_tok=6, hidden_dim=5, mlp_hidden=[8], batch_size=8,
                                max_pairs_per_category=4, max_epochs=2, lr=0.01, seed=4)
        model, history = train_reranker(self.split, self.tokenizer, config)
        self.assertGreaterEqual(len(history["epochs"]), 1)
        self.assertFalse(model.training)
        self.assertLessEqual(history["best_epoch"], len(history["epochs"]))

    def test_zero_epochs(self):
        model, history = train_reranker(self.split, self.tokenizer, RerankerConfig(d_tok=4, hidden_dim=3,
                                                                                    mlp_hidden=[4], max_epochs=0))
        self.assertEqual(history["epochs"], [])
        self.assertEqual(float(model.significance.abs().sum()), 0.0)


if __name__ == "__main__":
    unittest.main()
