"""
Slow end-to-end checks on benchmark-sized data.

Skipped unless DEDUP_SLOW_TESTS is set; the real-dataset check also needs
DEDUP_UBUNTU_DATA pointing at the Ubuntu bug-report export.
"""

import contextlib
import io
import json
import os
import shutil
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from dedup.cli import main
from dedup.config.schema import IndexConfig
from dedup.modules.index import EmbeddingStore

SLOW = bool(os.environ.get("DEDUP_SLOW_TESTS"))
UBUNTU_DATA = os.environ.get("DEDUP_UBUNTU_DATA")


def run_cli(state: Path, *argv, profile: str = "default"):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(["-c", str(state.parent / "absent-config.yaml"), "-p", profile, "-s", str(state), *argv])
    return code, out.getvalue()


def load_metrics(output: Path, variant: str):
    with open(output / f"{variant}.json", "r", encoding="utf-8") as f:
        return json.load(f)


@unittest.skipUnless(SLOW, "set DEDUP_SLOW_TESTS to run benchmark-sized checks")
class TestAnnRecall(unittest.TestCase):
    """Graph search against the exhaustive scan on 10k random 200-dim vectors."""

    def test_recall_at_10(self):
        rng = np.random.default_rng(0)
        store = EmbeddingStore(200, IndexConfig(ef_search=256, exact_threshold=1))
        for i, row in enumerate(rng.normal(size=(10000, 200)).astype(np.float32)):
            store.add(f"r{i}", row)
        store.build_graph()

        queries = rng.normal(size=(1000, 200)).astype(np.float32)
        recalls = []
        for query in queries:
            exact = {rid for rid, _ in store.exact_search(query, 10)}
            approx = {rid for rid, _ in store.ann_search(query, 10)}
            recalls.append(len(exact & approx) / 10)
        self.assertGreaterEqual(float(np.mean(recalls)), 0.95)


@unittest.skipUnless(SLOW, "set DEDUP_SLOW_TESTS to run benchmark-sized checks")
class TestSyntheticEndToEnd(unittest.TestCase):
    """Train and evaluate on the full-size synthetic dataset."""

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.state = Path(self.tmp) / "state"

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_neural_pipelines_beat_edit_distance(self):
        self.assertEqual(run_cli(self.state, "ingest", "--adapter", "synthetic")[0], 0)
        self.assertEqual(run_cli(self.state, "train")[0], 0)
        output = Path(self.tmp) / "eval"
        code, _ = run_cli(self.state, "eval", "--pipelines", "embedder,reranked,edit", "--output", str(output))
        self.assertEqual(code, 0)

        embedder = load_metrics(output, "embedder")
        reranked = load_metrics(output, "reranked")
        edit = load_metrics(output, "edit")
        self.assertGreaterEqual(embedder["acc_at_1"], 0.90)
        self.assertGreaterEqual(reranked["acc_at_1"], embedder["acc_at_1"] - 0.01)
        self.assertGreaterEqual(embedder["roc_auc"], 0.90)
        self.assertGreater(embedder["acc_at_1"], edit["acc_at_1"])
        self.assertGreater(reranked["acc_at_1"], edit["acc_at_1"])

    def test_retrieval_is_much_faster_than_reranking(self):
        code, out = run_cli(self.state, "bench", "--size", "10000", "--queries", "50", "--k", "10")
        self.assertEqual(code, 0)
        results = json.loads(out.splitlines()[0])["results"]
        self.assertLess(results["retrieval"]["mean_ms"] * 5, results["reranked"]["mean_ms"])


@unittest.skipUnless(SLOW and UBUNTU_DATA, "set DEDUP_SLOW_TESTS and DEDUP_UBUNTU_DATA")
class TestUbuntuDataset(unittest.TestCase):
    """Accuracy on the public Ubuntu dataset."""

    def test_accuracy(self):
        with tempfile.TemporaryDirectory() as tmp:
            state = Path(tmp) / "state"
            self.assertEqual(run_cli(state, "ingest", "--adapter", "ubuntu", UBUNTU_DATA)[0], 0)
            self.assertEqual(run_cli(state, "train")[0], 0)
            output = Path(tmp) / "eval"
            code, _ = run_cli(state, "eval", "--pipelines", "embedder,reranked", "--output", str(output))
            self.assertEqual(code, 0)

            embedder = load_metrics(output, "embedder")
            reranked = load_metrics(output, "reranked")
            self.assertGreaterEqual(embedder["acc_at_1"], 0.50)
            self.assertGreaterEqual(reranked["acc_at_1"], 0.55)
            self.assertGreaterEqual(reranked["acc_at_1"], embedder["acc_at_1"] - 0.01)


if __name__ == "__main__":
    unittest.main()
