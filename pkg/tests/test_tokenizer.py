"""
Unit tests for frame splitting and BPE tokenization.
"""

import json
import sys
import tempfile
import unittest
from pathlib import Path

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from dedup.core.trace import StackTrace
from dedup.exceptions import DataError, EmptyInputError, MissingArtifactError, VersionMismatchError
from dedup.modules.tokenizer import PAD_ID, UNK_ID, BpeVocab, TraceTokenizer, split_frame, train_bpe


def trace(*frames, rid="r"):
    return StackTrace.build(rid, 0, frames)


class TestSplitFrame(unittest.TestCase):
    """Test cases for identifier splitting."""

    def test_java_frame(self):
        self.assertEqual(
            split_frame("com.intellij.openapi.EditorImpl.getDocument"),
            ["com", "intellij", "openapi", "editor", "impl", "get", "document"],
        )

    def test_acronyms_digits_and_location(self):
        self.assertEqual(split_frame("HTTPServer.parse2Int(Server.java:10)"), ["http", "server", "parse2", "int"])
        self.assertEqual(split_frame("g_main_loop_run"), ["g", "main", "loop", "run"])


class TestTrainBpe(unittest.TestCase):
    """Test cases for BPE training and encoding."""

    def test_reserved_ids(self):
        vocab = train_bpe([trace("ab.ab")], 10)
        self.assertEqual(vocab.token_to_id["<pad>"], PAD_ID)
        self.assertEqual(vocab.token_to_id["<unk>"], UNK_ID)

    def test_most_frequent_pair_is_merged(self):
        vocab = train_bpe([trace("ab.ab.ab")], 10)
        self.assertEqual(vocab.merges, [("a", "b")])
        self.assertEqual(vocab.encode_piece("ab"), (vocab.token_to_id["ab"],))

    def test_ties_go_to_smallest_pair(self):
        vocab = train_bpe([trace("cd.cd.ab.ab")], 7)
        self.assertEqual(vocab.merges, [("a", "b")])
        self.assertEqual(vocab.size, 7)

    def test_pairs_seen_once_are_not_merged(self):
        vocab = train_bpe([trace("xy")], 100)
        self.assertEqual(vocab.merges, [])

    def test_unknown_characters_map_to_unk(self):
        vocab = train_bpe([trace("ab.ab.ab")], 10)
        self.assertEqual(vocab.encode_piece("abz"), (vocab.token_to_id["ab"], UNK_ID))

    def test_size_bounds(self):
        corpus = [trace("getDocument.getEditor.getDocument", "runTask.runAction")]
        vocab = train_bpe(corpus, 40)
        self.assertLessEqual(vocab.size, 40)
        with self.assertRaises(DataError):
            train_bpe(corpus, 4)

    def test_empty_corpus(self):
        with self.assertRaises(EmptyInputError):
            train_bpe([], 100)

    def test_save_and_load(self):
        corpus = [trace("getDocument.getEditor", "runTask.runAction.getTask")]
        vocab = train_bpe(corpus, 50)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "vocab.json"
            vocab.save(path)
            loaded = BpeVocab.load(path)
            self.assertEqual(loaded.merges, vocab.merges)
            self.assertEqual(loaded.token_to_id, vocab.token_to_id)
            self.assertEqual(loaded.encode_piece("gettask"), vocab.encode_piece("gettask"))

            data = json.loads(path.read_text(encoding="utf-8"))
            data["version"] = 99
            path.write_text(json.dumps(data), encoding="utf-8")
            with self.assertRaises(VersionMismatchError):
                BpeVocab.load(path)
            with self.assertRaises(MissingArtifactError):
                BpeVocab.load(Path(tmp) / "missing.json")


class TestTraceTokenizer(unittest.TestCase):
    """Test cases for trace encoding with truncation."""

    def setUp(self):
        corpus = [trace("com.acme.EditorImpl.getDocument", "com.acme.Task.run")] * 3
        self.vocab = train_bpe(corpus, 60)

    def test_frame_and_token_truncation(self):
        tokenizer = TraceTokenizer(self.vocab, max_frames=2, max_tokens_per_frame=3)
        encoded = tokenizer(trace("com.acme.EditorImpl.getDocument", "com.acme.Task.run", "extra.frame", rid="q"))
        self.assertEqual(len(encoded), 2)
        self.assertEqual(encoded.report_id, "q")
        self.assertTrue(all(1 <= len(ids) <= 3 for ids in encoded.frames))
        self.assertEqual(encoded.frame_keys, ("com.acme.EditorImpl.getDocument", "com.acme.Task.run"))

    def test_pad_never_emitted(self):
        tokenizer = TraceTokenizer(self.vocab)
        encoded = tokenizer(trace("com.acme.Task.run", "zzz.qqq"))
        self.assertNotIn(PAD_ID, [i for ids in encoded.frames for i in ids])

    def test_frame_without_pieces_keeps_unk(self):
        tokenizer = TraceTokenizer(self.vocab)
        encoded = tokenizer(trace("..."))
        self.assertEqual(encoded.frames, ((UNK_ID,),))

    def test_encode_many(self):
        tokenizer = TraceTokenizer(self.vocab)
        traces = [trace("com.acme.Task.run", rid=str(i)) for i in range(3)]
        self.assertEqual([t.report_id for t in tokenizer.encode_many(traces)], ["0", "1", "2"])


if __name__ == "__main__":
    unittest.main()
