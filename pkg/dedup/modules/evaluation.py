"""
Chronological replay harness and metrics.

Test reports are replayed in arrival order against a pipeline preloaded
with the history. After each event the state receives the report with its
true category, so one wrong prediction never changes later events.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from dedup.core.dataset import DatasetSplit, chronological_order
from dedup.core.trace import StackTrace, content_hash
from dedup.exceptions import DataError
from dedup.modules.pipeline import Ranking, SimilarityPipeline
from dedup.utils.logger import log_event

logger = logging.getLogger(__name__)

STAGES = ("retrieval", "rerank", "total")


@dataclass
class EvalEvent:
    """One replayed report."""
    report_id: str
    truth: str
    is_new: bool
    skipped: bool
    prediction: Optional[List[Tuple[str, float]]] = None
    top_score: Optional[float] = None
    retrieval_ms: float = 0.0
    rerank_ms: float = 0.0

    @property
    def correct(self) -> bool:
        return bool(self.prediction) and self.prediction[0][0] == self.truth

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["prediction"] = [list(p) for p in self.prediction] if self.prediction is not None else None
        return data


@dataclass
class MetricsReport:
    """Metrics of one pipeline variant on the test split."""
    variant: str
    acc_at_1: Optional[float]
    roc_auc: Optional[float]
    threshold: Optional[float]
    f1_at_threshold: Optional[float]
    latency: Dict[str, Dict[str, float]] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def replay(history: Sequence[StackTrace], stream: Sequence[StackTrace],
           pipeline: SimilarityPipeline) -> List[EvalEvent]:
    """
    Replay ``stream`` against ``pipeline`` loaded with ``history``.

    A report whose content matches anything already seen is skipped; it
    still joins the state under its true category.

    Raises:
        DataError: if a streamed report has no category
    """
    for report in stream:
        if report.category_id is None:
            raise DataError(f"cannot evaluate unlabeled report '{report.report_id}'")

    pipeline.reset(list(history))
    seen = {content_hash(r).digest for r in history}
    known = {r.category_id for r in history}
    events: List[EvalEvent] = []
    for report in chronological_order(stream):
        digest = content_hash(report).digest
        event = EvalEvent(
            report_id=report.report_id,
            truth=report.category_id,
            is_new=report.category_id not in known,
            skipped=digest in seen,
        )
        if not event.skipped and known:
            ranking: Ranking = pipeline.rank(report)
            event.prediction = ranking.categories
            event.top_score = ranking.top_score if ranking.categories else pipeline.score_floor
            event.retrieval_ms = ranking.retrieval_ms
            event.rerank_ms = ranking.rerank_ms
        elif not event.skipped:
            event.top_score = pipeline.score_floor
        pipeline.add(report, report.category_id)
        seen.add(digest)
        known.add(report.category_id)
        events.append(event)
    return events


def replay_split(split: DatasetSplit, pipeline: SimilarityPipeline) -> List[EvalEvent]:
    """Test split against train plus validation."""
    return replay(split.history, split.test, pipeline)


def replay_validation(split: DatasetSplit, pipeline: SimilarityPipeline) -> List[EvalEvent]:
    """Validation split against train only, for threshold calibration."""
    return replay(split.train, split.validation, pipeline)


def _scored(events: Sequence[EvalEvent]) -> Tuple[np.ndarray, np.ndarray]:
    active = [e for e in events if not e.skipped]
    scores = np.array([e.top_score for e in active], dtype=np.float64)
    is_new = np.array([e.is_new for e in active], dtype=bool)
    return scores, is_new


def acc_at_1(events: Sequence[EvalEvent]) -> Optional[float]:
    """Share of non-skipped attach events whose top category is the true one; None without any."""
    attach = [e for e in events if not e.skipped and not e.is_new]
    if not attach:
        return None
    return sum(e.correct for e in attach) / len(attach)


def roc_auc_new_category(events: Sequence[EvalEvent]) -> float:
    """
    ROC-AUC of the top-1 score separating attach events (positive) from new ones.

    Raises:
        DataError: unless both classes are present
    """
    scores, is_new = _scored(events)
    if is_new.all() or not is_new.any():
        raise DataError("ROC-AUC needs both attach and new-category events")
    return float(roc_auc_score((~is_new).astype(int), scores))


def f1_new_category(scores: np.ndarray, is_new: np.ndarray, threshold: float) -> float:
    """F1 of the new-category class when ``score <= threshold`` means new."""
    predicted = scores <= threshold
    tp = int(np.sum(predicted & is_new))
    fp = int(np.sum(predicted & ~is_new))
    fn = int(np.sum(~predicted & is_new))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def calibrate_threshold(events: Sequence[EvalEvent]) -> Tuple[float, float]:
    """
    Pick the threshold with the best new-category F1.

    Candidates are ±inf and the midpoints between consecutive distinct
    top-1 scores; equal F1 goes to the smallest threshold.

    Returns:
        ``(threshold, f1)``

    Raises:
        DataError: unless both classes are present
    """
    scores, is_new = _scored(events)
    if is_new.all() or not is_new.any():
        raise DataError("threshold calibration needs both attach and new-category events")
    distinct = np.unique(scores)
    candidates = np.concatenate([[-math.inf], (distinct[:-1] + distinct[1:]) / 2.0, [math.inf]])

    new_sorted = np.sort(scores[is_new])
    attach_sorted = np.sort(scores[~is_new])
    tp = np.searchsorted(new_sorted, candidates, side="right")
    fp = np.searchsorted(attach_sorted, candidates, side="right")
    fn = len(new_sorted) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    best = int(np.argmax(f1))
    return float(candidates[best]), float(f1[best])


def _stats(values: Sequence[float]) -> Dict[str, float]:
    if len(values) == 0:
        return {"mean_ms": 0.0, "p50_ms": 0.0, "p95_ms": 0.0, "count": 0}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
        "count": int(arr.size),
    }


def latency_summary(retrieval: Sequence[float], rerank: Sequence[float]) -> Dict[str, Dict[str, float]]:
    total = [a + b for a, b in zip(retrieval, rerank)]
    return {"retrieval": _stats(retrieval), "rerank": _stats(rerank), "total": _stats(total)}


def latency_from_events(events: Sequence[EvalEvent], warmup: int = 0) -> Dict[str, Dict[str, float]]:
    """Per-stage statistics over ranked events, dropping the first ``warmup``."""
    timed = [e for e in events if e.prediction is not None][warmup:]
    return latency_summary([e.retrieval_ms for e in timed], [e.rerank_ms for e in timed])


def measure_latency(pipeline: SimilarityPipeline, queries: Sequence[StackTrace],
                    warmup: int = 5) -> Dict[str, Dict[str, float]]:
    """
    Time ``pipeline.rank`` per query without changing the stored history.

    The incoming report's own embedding is part of the retrieval stage.
    The first ``warmup`` queries are run untimed; at least one query is
    always timed.
    """
    if not queries:
        raise DataError("measure_latency needs at least one query")
    warmup = min(max(warmup, 0), len(queries) - 1)
    for report in queries[:warmup]:
        pipeline.rank(report)
    retrieval, rerank = [], []
    for report in queries[warmup:]:
        ranking = pipeline.rank(report)
        retrieval.append(ranking.retrieval_ms)
        rerank.append(ranking.rerank_ms)
    return latency_summary(retrieval, rerank)


def counts(events: Sequence[EvalEvent]) -> Dict[str, int]:
    return {
        "attached": sum(1 for e in events if not e.skipped and not e.is_new),
        "new": sum(1 for e in events if not e.skipped and e.is_new),
        "skipped": sum(1 for e in events if e.skipped),
    }


def evaluate_pipeline(split: DatasetSplit, pipeline: SimilarityPipeline, warmup: int = 5,
                      threshold: Optional[float] = None) -> Tuple[MetricsReport, List[EvalEvent]]:
    """
    Calibrate on validation (unless ``threshold`` is given), then replay the test split.

    Returns:
        The metrics report and the test events
    """
    f1_val = None
    if threshold is None:
        try:
            threshold, f1_val = calibrate_threshold(replay_validation(split, pipeline))
        except DataError as e:
            logger.warning(f"{pipeline.name}: threshold not calibrated ({e})")

    events = replay_split(split, pipeline)
    try:
        auc = roc_auc_new_category(events)
    except DataError as e:
        logger.warning(f"{pipeline.name}: ROC-AUC undefined ({e})")
        auc = None

    f1_test = None
    if threshold is not None:
        scores, is_new = _scored(events)
        if is_new.any():
            f1_test = f1_new_category(scores, is_new, threshold)

    report = MetricsReport(
        variant=pipeline.name,
        acc_at_1=acc_at_1(events),
        roc_auc=auc,
        threshold=threshold,
        f1_at_threshold=f1_test if f1_test is not None else f1_val,
        latency=latency_from_events(events, warmup),
        counts=counts(events),
    )
    log_event("evaluation finished", variant=report.variant, acc_at_1=report.acc_at_1,
              roc_auc=report.roc_auc, threshold=report.threshold, **report.counts)
    return report, events


def comparison_table(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """One row per variant: Acc@1, ROC-AUC, threshold, F1 and mean latencies."""
    rows = []
    for r in reports:
        rows.append({
            "Variant": r.variant,
            "Acc@1": r.acc_at_1,
            "ROC-AUC": r.roc_auc,
            "Threshold": r.threshold,
            "F1": r.f1_at_threshold,
            "Retrieval ms": r.latency.get("retrieval", {}).get("mean_ms"),
            "Rerank ms": r.latency.get("rerank", {}).get("mean_ms"),
            "Mean ms": r.latency.get("total", {}).get("mean_ms"),
        })
    return pd.DataFrame(rows, columns=["Variant", "Acc@1", "ROC-AUC", "Threshold", "F1",
                                       "Retrieval ms", "Rerank ms", "Mean ms"])


def format_table(table: pd.DataFrame) -> str:
    """Aligned plain-text rendering; missing values print as ``-``."""
    return table.to_string(index=False, na_rep="-", float_format=lambda v: f"{v:.4f}")


def write_reports(output_dir: Union[str, Path], reports: Sequence[MetricsReport],
                  events: Optional[Dict[str, List[EvalEvent]]] = None) -> pd.DataFrame:
    """
    Write ``<variant>.json`` per report, the comparison table as JSON, text
    and CSV, and optionally ``<variant>.events.jsonl``.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        with open(output_dir / f"{report.variant}.json", "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
    table = comparison_table(reports)
    with open(output_dir / "comparison.json", "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in reports], f, indent=2)
    (output_dir / "comparison.txt").write_text(format_table(table) + "\n", encoding="utf-8")
    table.to_csv(output_dir / "comparison.csv", index=False)
    for variant, variant_events in (events or {}).items():
        with open(output_dir / f"{variant}.events.jsonl", "w", encoding="utf-8") as f:
            for event in variant_events:
                f.write(json.dumps(event.to_dict()) + "\n")
    logger.info(f"Wrote {len(reports)} metrics reports to {output_dir}")
    return table
