"""
Synthetic crash-report generator.

Each category has a base trace drawn from a shared pool of frame names; its
reports are noisy copies of the base with frames inserted, deleted or
substituted. Every category has a birth time at which its first report
arrives. Regular categories are born before the test window, so some first
appear during validation; a few "late" categories are born after the last
history report and reach the test split as brand-new issues.
"""

import logging
from typing import List, Optional

import numpy as np

from dedup.core.trace import StackTrace

logger = logging.getLogger(__name__)

_PACKAGES = ["core", "ui", "net", "io", "util", "editor", "vcs", "debug", "index", "psi",
             "search", "build", "lang", "project", "render", "cache", "plugin", "diff"]
_NOUNS = ["Editor", "Document", "Manager", "Service", "Provider", "Handler", "Factory",
          "Listener", "Builder", "Resolver", "Cache", "Index", "Model", "View", "Action",
          "Client", "Server", "Parser", "Reader", "Writer", "Queue", "Task", "Worker"]
_VERBS = ["get", "set", "run", "load", "save", "parse", "build", "resolve", "update",
          "create", "dispatch", "handle", "compute", "invoke", "process", "flush", "read"]


def frame_vocabulary(size: int, rng: np.random.Generator) -> List[str]:
    """Distinct Java-style frame names such as ``com.acme.vcs.DiffCacheWorker.flushTask``."""
    names: List[str] = []
    seen = set()
    while len(names) < size:
        package = _PACKAGES[rng.integers(len(_PACKAGES))]
        cls = _NOUNS[rng.integers(len(_NOUNS))] + _NOUNS[rng.integers(len(_NOUNS))]
        method = _VERBS[rng.integers(len(_VERBS))] + _NOUNS[rng.integers(len(_NOUNS))]
        name = f"com.acme.{package}.{cls}.{method}"
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def mutate(base: List[str], vocabulary: List[str], rate: float, rng: np.random.Generator) -> List[str]:
    """Copy ``base`` applying insertion, deletion or substitution at each position with probability ``rate``."""
    out: List[str] = []
    for frame in base:
        if rng.random() >= rate:
            out.append(frame)
            continue
        op = rng.integers(3)
        if op == 0:
            out.append(vocabulary[rng.integers(len(vocabulary))])
            out.append(frame)
        elif op == 1:
            continue
        else:
            out.append(vocabulary[rng.integers(len(vocabulary))])
    return out or [base[0]]


def generate_dataset(
    n_categories: int = 50,
    reports_per_category: int = 40,
    vocabulary_size: int = 500,
    min_frames: int = 20,
    max_frames: int = 40,
    noise_rate: float = 0.15,
    unseen_test_fraction: float = 0.2,
    test_ratio: float = 0.2,
    seed: int = 0,
) -> List[StackTrace]:
    """
    Generate a labelled dataset.

    Args:
        n_categories: Number of categories
        reports_per_category: Noisy variants per category
        vocabulary_size: Size of the shared frame pool
        min_frames: Shortest base trace
        max_frames: Longest base trace
        noise_rate: Per-frame mutation probability
        unseen_test_fraction: Share of the test window taken by late categories
        test_ratio: Share of the timeline forming the test window
        seed: Random seed

    Returns:
        Reports ordered by timestamp
    """
    rng = np.random.default_rng(seed)
    vocabulary = frame_vocabulary(vocabulary_size, rng)
    total = n_categories * reports_per_category
    n_late = int(round(unseen_test_fraction * test_ratio * n_categories))
    n_late = min(max(n_late, 1 if unseen_test_fraction > 0 else 0), n_categories - 1)
    test_start = int(total * (1.0 - test_ratio))

    bases = []
    for _ in range(n_categories):
        length = int(rng.integers(min_frames, max_frames + 1))
        bases.append([vocabulary[i] for i in rng.choice(len(vocabulary), size=length, replace=False)])

    n_regular = n_categories - n_late
    times = np.zeros((n_categories, reports_per_category), dtype=np.int64)
    for c in range(n_regular):
        birth = int(rng.integers(0, test_start))
        times[c] = rng.integers(birth, total, size=reports_per_category)
        times[c, 0] = birth

    # Late categories start after the last report the history split can hold;
    # on equal timestamps their ids sort after every regular report.
    if n_late:
        regular = np.sort(times[:n_regular].ravel())
        history_size = int(np.floor((1.0 - test_ratio) * total + 0.5))
        cutoff = int(regular[min(history_size, len(regular) - 1)])
        for c in range(n_regular, n_categories):
            birth = int(rng.integers(cutoff, total))
            times[c] = rng.integers(birth, total, size=reports_per_category)
            times[c, 0] = birth

    reports: List[StackTrace] = []
    for c, base in enumerate(bases):
        for v in range(reports_per_category):
            frames = mutate(base, vocabulary, noise_rate, rng)
            reports.append(StackTrace.build(
                report_id=f"s{c:03d}-{v:03d}",
                timestamp=int(times[c, v]) * 1000,
                frames=frames,
                category_id=f"cat{c:03d}",
            ))

    reports.sort(key=lambda r: (r.timestamp, r.report_id))
    logger.info(f"Generated {len(reports)} synthetic reports in {n_categories} categories ({n_late} late)")
    return reports


def random_traces(count: int, vocabulary_size: int = 500, min_frames: int = 20, max_frames: int = 40,
                  seed: Optional[int] = 0) -> List[StackTrace]:
    """Random traces in filler categories, used to populate benchmark stores."""
    rng = np.random.default_rng(seed)
    vocabulary = frame_vocabulary(vocabulary_size, rng)
    traces = []
    for i in range(count):
        length = int(rng.integers(min_frames, max_frames + 1))
        frames = [vocabulary[j] for j in rng.integers(0, len(vocabulary), size=length)]
        traces.append(StackTrace.build(f"b{i:07d}", i, frames, category_id=f"b{i % 1000:04d}"))
    return traces
