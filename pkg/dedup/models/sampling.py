"""
Training-pair and triplet sampling shared by both models.
"""

import bisect
import heapq
import itertools
import logging
import random
from collections import OrderedDict, deque
from typing import Deque, Dict, List, Sequence, Tuple

from dedup.core.trace import StackTrace, content_hash
from dedup.exceptions import DataError

logger = logging.getLogger(__name__)

Pair = Tuple[StackTrace, StackTrace]
Triplet = Tuple[StackTrace, StackTrace, StackTrace]


def group_unique(reports: Sequence[StackTrace]) -> "OrderedDict[str, List[StackTrace]]":
    """Labelled reports per category, keeping the first report of each distinct content."""
    groups: "OrderedDict[str, List[StackTrace]]" = OrderedDict()
    seen: Dict[str, set] = {}
    for report in reports:
        if report.category_id is None:
            continue
        digest = content_hash(report).digest
        hashes = seen.setdefault(report.category_id, set())
        if digest in hashes:
            continue
        hashes.add(digest)
        groups.setdefault(report.category_id, []).append(report)
    return groups


def _pair_at(index: int, n: int, offsets: Sequence[int]) -> Tuple[int, int]:
    """The ``index``-th pair of ``itertools.combinations(range(n), 2)``."""
    i = bisect.bisect_right(offsets, index) - 1
    return i, i + 1 + index - offsets[i]


def sample_training_pairs(train: Sequence[StackTrace], max_pairs_per_category: int, seed: int) -> List[Pair]:
    """
    Anchor/positive pairs with a per-category cap.

    Every category contributes all unordered pairs of its distinct-content
    reports, or a uniform sample of exactly ``max_pairs_per_category`` of them
    when there are more. Sampled pairs are decoded from their rank in
    lexicographic order, so large categories never list every pair. The
    combined list is shuffled.

    Raises:
        DataError: when no category has two distinct reports
    """
    rng = random.Random(seed)
    pairs: List[Pair] = []
    for category, members in group_unique(train).items():
        n = len(members)
        if n < 2:
            continue
        total = n * (n - 1) // 2
        ranks = range(total)
        if total > max_pairs_per_category:
            ranks = rng.sample(ranks, max_pairs_per_category)
        offsets = list(itertools.accumulate((n - 1 - i for i in range(n - 2)), initial=0))
        for rank in ranks:
            i, j = _pair_at(rank, n, offsets)
            pairs.append((members[i], members[j]))
    if not pairs:
        raise DataError("no category has two distinct reports to pair")
    rng.shuffle(pairs)
    logger.debug(f"Sampled {len(pairs)} training pairs")
    return pairs


def build_batches(pairs: Sequence[Pair], batch_size: int) -> List[List[Pair]]:
    """
    Group pairs into batches where no two pairs share a category.

    Each batch takes the earliest waiting pair of the ``batch_size``
    categories whose earliest pair comes first; the rest wait for a later
    batch. Batches smaller than two pairs carry no negatives and end the
    batching.
    """
    queues: Dict[str, Deque[Tuple[int, Pair]]] = {}
    for position, pair in enumerate(pairs):
        queues.setdefault(pair[0].category_id, deque()).append((position, pair))
    heads = [(queue[0][0], category) for category, queue in queues.items()]
    heapq.heapify(heads)

    batches: List[List[Pair]] = []
    while heads:
        chosen = [heapq.heappop(heads) for _ in range(min(batch_size, len(heads)))]
        if len(chosen) < 2:
            break
        batch: List[Pair] = []
        for _, category in chosen:
            queue = queues[category]
            batch.append(queue.popleft()[1])
            if queue:
                heapq.heappush(heads, (queue[0][0], category))
        batches.append(batch)
    return batches


def sample_triplets(train: Sequence[StackTrace], max_pairs_per_category: int, seed: int) -> List[Triplet]:
    """
    Extend each training pair with a negative from another category.

    The negative category is drawn uniformly among the others, then a report
    uniformly within it.

    Raises:
        DataError: with fewer than two categories
    """
    groups = group_unique(train)
    if len(groups) < 2:
        raise DataError("triplet sampling needs at least two categories")
    pairs = sample_training_pairs(train, max_pairs_per_category, seed)
    rng = random.Random(seed + 1)
    categories = list(groups)
    triplets: List[Triplet] = []
    for anchor, positive in pairs:
        others = [c for c in categories if c != anchor.category_id]
        negative_category = others[rng.randrange(len(others))]
        members = groups[negative_category]
        triplets.append((anchor, positive, members[rng.randrange(len(members))]))
    return triplets
