"""
Frame splitting and character-level byte-pair encoding.

Frames are cut into identifier pieces (dots, underscores and other
separators, then camelCase boundaries), lowercased, and each piece is encoded
with a BPE vocabulary trained on the training split only.
"""

import heapq
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from dedup.core.trace import Frame, StackTrace, normalize_frame
from dedup.exceptions import DataError, EmptyInputError, VersionMismatchError, MissingArtifactError

logger = logging.getLogger(__name__)

VOCAB_VERSION = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
RESERVED = (PAD_TOKEN, UNK_TOKEN)

_SEPARATORS = re.compile(r"[.\s_$/:]+")
# acronym runs keep their last capital for the next word; digits stay with the preceding piece
_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+\d*|[A-Z]+\d*|\d+|[^A-Za-z\d]+")


def split_frame(frame: Union[Frame, str]) -> List[str]:
    """
    Split a frame into lowercased identifier pieces.

    ``"com.intellij.openapi.EditorImpl.getDocument"`` becomes
    ``[com, intellij, openapi, editor, impl, get, document]``.
    """
    text = frame.normalized if isinstance(frame, Frame) else normalize_frame(frame)
    pieces: List[str] = []
    for segment in _SEPARATORS.split(text):
        if not segment:
            continue
        pieces.extend(part.lower() for part in _CAMEL.findall(segment) if part)
    return pieces


@dataclass
class BpeVocab:
    """Trained BPE merges and the symbol table."""
    merges: List[Tuple[str, str]]
    token_to_id: Dict[str, int]
    target_size: int

    def __post_init__(self):
        self.merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache: Dict[str, Tuple[int, ...]] = {}

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def encode_piece(self, piece: str) -> Tuple[int, ...]:
        """Encode one identifier piece, applying merges in training order."""
        cached = self._cache.get(piece)
        if cached is not None:
            return cached

        symbols: List[Optional[str]] = [c if c in self.token_to_id else None for c in piece]
        while len(symbols) > 1:
            best_rank = None
            best_pair = None
            for left, right in zip(symbols, symbols[1:]):
                if left is None or right is None:
                    continue
                rank = self.merge_ranks.get((left, right))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, (left, right)
            if best_pair is None:
                break
            merged = best_pair[0] + best_pair[1]
            out: List[Optional[str]] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == best_pair[0] and symbols[i + 1] == best_pair[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out

        ids = tuple(UNK_ID if s is None else self.token_to_id[s] for s in symbols)
        self._cache[piece] = ids
        return ids

    def to_dict(self) -> Dict:
        tokens = dict(sorted(self.token_to_id.items(), key=lambda item: item[1]))
        return {
            "version": VOCAB_VERSION,
            "vocab_size": self.size,
            "target_size": self.target_size,
            "merges": [list(pair) for pair in self.merges],
            "tokens": tokens,
        }

    def save(self, path: Union[str, Path]) -> None:
        """Write the versioned JSON vocabulary file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=None, separators=(",", ":"))
            f.write("\n")
        logger.info(f"Saved BPE vocabulary ({self.size} symbols) to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BpeVocab":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"Vocabulary not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if data.get("version") != VOCAB_VERSION:
            raise VersionMismatchError(f"{path} has vocab version {data.get('version')}, expected {VOCAB_VERSION}")
        return cls(
            merges=[tuple(pair) for pair in data["merges"]],
            token_to_id={k: int(v) for k, v in data["tokens"].items()},
            target_size=int(data.get("target_size", data["vocab_size"])),
        )


@dataclass(frozen=True)
class TokenizedTrace:
    """Token ids per frame plus the normalized frame strings used for identity."""
    frames: Tuple[Tuple[int, ...], ...]
    frame_keys: Tuple[str, ...]
    report_id: Optional[str] = None

    def __len__(self) -> int:
        return len(self.frames)


def _corpus_pieces(corpus: Iterable[StackTrace]) -> Counter:
    counts: Counter = Counter()
    frame_cache: Dict[str, List[str]] = {}
    for trace in corpus:
        for key in trace.frame_keys:
            pieces = frame_cache.get(key)
            if pieces is None:
                pieces = frame_cache[key] = split_frame(key)
            counts.update(pieces)
    return counts


def train_bpe(corpus: Sequence[StackTrace], vocab_size: int) -> BpeVocab:
    """
    Train a character-level BPE vocabulary.

    Merges the most frequent adjacent symbol pair until ``vocab_size``
    symbols exist (reserved ids included) or no pair occurs twice. Ties go
    to the lexicographically smallest pair.

    Args:
        corpus: Training-split traces
        vocab_size: Upper bound on the number of symbols

    Returns:
        Trained vocabulary
    """
    if not corpus:
        raise EmptyInputError("cannot train BPE on an empty corpus")
    piece_counts = _corpus_pieces(corpus)
    if not piece_counts:
        raise EmptyInputError("corpus yields no identifier pieces")

    alphabet = sorted({c for piece in piece_counts for c in piece})
    if vocab_size < len(alphabet) + len(RESERVED):
        raise DataError(
            f"vocab_size {vocab_size} is smaller than the alphabet ({len(alphabet)}) plus reserved tokens"
        )

    token_to_id: Dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for char in alphabet:
        token_to_id[char] = len(token_to_id)

    ordered = sorted(piece_counts.items())
    words: List[List[str]] = [list(piece) for piece, _ in ordered]
    freqs: List[int] = [count for _, count in ordered]

    pair_counts: Counter = Counter()
    pair_words: Dict[Tuple[str, str], set] = defaultdict(set)
    for idx, symbols in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += freqs[idx]
            pair_words[pair].add(idx)

    heap = [(-count, pair) for pair, count in pair_counts.items()]
    heapq.heapify(heap)
    merges: List[Tuple[str, str]] = []

    while len(token_to_id) < vocab_size and heap:
        neg_count, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg_count:
            continue
        if -neg_count < 2:
            break

        merged = pair[0] + pair[1]
        merges.append(pair)
        if merged not in token_to_id:
            token_to_id[merged] = len(token_to_id)

        touched = set()
        for idx in sorted(pair_words.pop(pair, ())):
            symbols = words[idx]
            freq = freqs[idx]
            for old in zip(symbols, symbols[1:]):
                pair_counts[old] -= freq
                touched.add(old)
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[idx] = out
            for new in zip(out, out[1:]):
                pair_counts[new] += freq
                pair_words[new].add(idx)
                touched.add(new)

        for changed in touched:
            count = pair_counts[changed]
            if count > 0:
                heapq.heappush(heap, (-count, changed))
            else:
                del pair_counts[changed]
        pair_counts.pop(pair, None)

    logger.info(f"Trained BPE: {len(merges)} merges, {len(token_to_id)} symbols (alphabet {len(alphabet)})")
    return BpeVocab(merges=merges, token_to_id=token_to_id, target_size=vocab_size)


def encode_trace(
    trace: StackTrace,
    vocab: BpeVocab,
    max_frames: int = 128,
    max_tokens_per_frame: int = 32,
) -> TokenizedTrace:
    """
    Encode a trace frame by frame.

    Frames past ``max_frames`` (from the top) and tokens past
    ``max_tokens_per_frame`` are dropped. A frame whose pieces yield no
    token keeps a single UNK so every frame has a sequence.
    """
    frames = trace.frames[:max_frames]
    encoded = []
    for frame in frames:
        ids: List[int] = []
        for piece in split_frame(frame):
            ids.extend(vocab.encode_piece(piece))
            if len(ids) >= max_tokens_per_frame:
                break
        encoded.append(tuple(ids[:max_tokens_per_frame]) or (UNK_ID,))
    return TokenizedTrace(
        frames=tuple(encoded),
        frame_keys=tuple(f.normalized for f in frames),
        report_id=trace.report_id,
    )


class TraceTokenizer:
    """Binds a vocabulary to truncation limits."""

    def __init__(self, vocab: BpeVocab, max_frames: int = 128, max_tokens_per_frame: int = 32):
        self.vocab = vocab
        self.max_frames = max_frames
        self.max_tokens_per_frame = max_tokens_per_frame

    def __call__(self, trace: StackTrace) -> TokenizedTrace:
        return encode_trace(trace, self.vocab, self.max_frames, self.max_tokens_per_frame)

    def encode_many(self, traces: Iterable[StackTrace]) -> List[TokenizedTrace]:
        return [self(t) for t in traces]
