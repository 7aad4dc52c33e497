"""
Non-neural similarity baselines over whole normalized frames.

Includes the Lerch TF-IDF score and three string-matching similarities
(edit distance, common prefix, longest common subsequence).
"""

import logging
import math
from collections import Counter
from typing import Dict, Hashable, Iterable, List, Sequence, Tuple, Union

from dedup.core.trace import StackTrace
from dedup.exceptions import StoreError

logger = logging.getLogger(__name__)

Frames = Sequence[Hashable]


def _frames(trace: Union[StackTrace, Frames]) -> Tuple[Hashable, ...]:
    if isinstance(trace, StackTrace):
        return trace.frame_keys
    return tuple(trace)


class TfIdfIndex:
    """
    Inverted index of frame counts.

    Documents are added one at a time; an index built incrementally is
    identical to one built from the whole corpus at once.
    """

    def __init__(self):
        self.df: Counter = Counter()
        self.tf: Dict[str, Counter] = {}
        self.postings: Dict[Hashable, List[str]] = {}
        self._order: Dict[str, int] = {}

    @classmethod
    def from_corpus(cls, corpus: Iterable[StackTrace]) -> "TfIdfIndex":
        index = cls()
        for trace in corpus:
            index.add(trace.report_id, trace.frame_keys)
        return index

    @property
    def n_documents(self) -> int:
        return len(self.tf)

    def add(self, doc_id: str, frames: Frames) -> None:
        if doc_id in self.tf:
            raise StoreError(f"document '{doc_id}' already indexed")
        counts = Counter(frames)
        self.tf[doc_id] = counts
        self._order[doc_id] = len(self._order)
        for frame in counts:
            self.df[frame] += 1
            self.postings.setdefault(frame, []).append(doc_id)

    def idf(self, frame: Hashable) -> float:
        """``ln(N / df)`` with df floored at 1."""
        if not self.tf:
            raise StoreError("idf of an empty index")
        return math.log(self.n_documents / max(self.df.get(frame, 0), 1))

    def rank(self, query: Union[StackTrace, Frames]) -> List[Tuple[str, float]]:
        """Lerch scores of every document sharing a frame with ``query``, best first."""
        if not self.tf:
            raise StoreError("ranking against an empty index")
        scores: Dict[str, float] = {}
        for frame in set(_frames(query)):
            docs = self.postings.get(frame)
            if not docs:
                continue
            weight = self.idf(frame) ** 2
            for doc_id in docs:
                scores[doc_id] = scores.get(doc_id, 0.0) + self.tf[doc_id][frame] * weight
        return sorted(scores.items(), key=lambda item: (-item[1], self._order[item[0]]))


def lerch_score(q: Union[StackTrace, Frames], d: Union[StackTrace, Frames], idx: TfIdfIndex) -> float:
    """Sum over distinct query frames of ``tf_d(f) · idf(f)²``."""
    if idx.n_documents == 0:
        raise StoreError("lerch_score needs a non-empty index")
    tf_d = Counter(_frames(d))
    return float(sum(tf_d[f] * idx.idf(f) ** 2 for f in set(_frames(q)) if tf_d[f]))


def _match_masks(pattern: Frames) -> Dict[Hashable, int]:
    masks: Dict[Hashable, int] = {}
    for i, symbol in enumerate(pattern):
        masks[symbol] = masks.get(symbol, 0) | (1 << i)
    return masks


def levenshtein(a: Union[StackTrace, Frames], b: Union[StackTrace, Frames]) -> int:
    """Frame-level edit distance using bit-vector column updates."""
    pattern, text = _frames(a), _frames(b)
    m = len(pattern)
    if m == 0:
        return len(text)
    if not text:
        return m

    peq = _match_masks(pattern)
    full = (1 << m) - 1
    high = 1 << (m - 1)
    pv, mv, score = full, 0, m
    for symbol in text:
        eq = peq.get(symbol, 0)
        xv = eq | mv
        xh = ((((eq & pv) + pv) & full) ^ pv) | eq
        ph = (mv | ~(xh | pv)) & full
        mh = pv & xh
        if ph & high:
            score += 1
        elif mh & high:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = (mh | ~(xv | ph)) & full
        mv = ph & xv
    return score


def edit_similarity(q: Union[StackTrace, Frames], d: Union[StackTrace, Frames]) -> float:
    """``1 - levenshtein / max(|q|, |d|)``."""
    longest = max(len(_frames(q)), len(_frames(d)))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(q, d) / longest


def lcs_length(a: Union[StackTrace, Frames], b: Union[StackTrace, Frames]) -> int:
    """Longest common subsequence length of two frame sequences."""
    pattern, text = _frames(a), _frames(b)
    m = len(pattern)
    if m == 0 or not text:
        return 0
    peq = _match_masks(pattern)
    full = (1 << m) - 1
    v = full
    for symbol in text:
        u = v & peq.get(symbol, 0)
        v = ((v + u) | (v - u)) & full
    return m - bin(v).count("1")


def lcs_similarity(q: Union[StackTrace, Frames], d: Union[StackTrace, Frames]) -> float:
    longest = max(len(_frames(q)), len(_frames(d)))
    if longest == 0:
        return 1.0
    return lcs_length(q, d) / longest


def prefix_similarity(q: Union[StackTrace, Frames], d: Union[StackTrace, Frames]) -> float:
    """Common top-of-stack prefix length over the longer trace length."""
    a, b = _frames(q), _frames(d)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    common = 0
    for x, y in zip(a, b):
        if x != y:
            break
        common += 1
    return common / longest
