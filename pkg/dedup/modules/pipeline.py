"""
Pluggable similarity pipelines and the online deduplication engine.

Every pipeline keeps its own view of the report history and ranks
categories for an incoming report. The neural pipeline is the two-stage
embed, retrieve, rerank flow; the others are the comparison baselines.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dedup.config.schema import IndexConfig
from dedup.core.trace import StackTrace, content_hash
from dedup.exceptions import DataError
from dedup.models.embedder import EmbedderModel, embed_batch
from dedup.models.reranker import Decision, RerankerModel, decide, rerank
from dedup.modules.baselines import TfIdfIndex, edit_similarity, lcs_similarity, prefix_similarity
from dedup.modules.index import EmbeddingStore, Hit, category_scores
from dedup.modules.remote import RemoteEmbedderClient
from dedup.modules.tokenizer import TokenizedTrace, TraceTokenizer


@dataclass
class Ranking:
    """Ranked categories for one query plus per-stage wall-clock times."""
    categories: List[Tuple[str, float]] = field(default_factory=list)
    hits: List[Hit] = field(default_factory=list)
    retrieval_ms: float = 0.0
    rerank_ms: float = 0.0

    @property
    def top_score(self) -> Optional[float]:
        return self.categories[0][1] if self.categories else None

    @property
    def top_category(self) -> Optional[str]:
        return self.categories[0][0] if self.categories else None


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


class SimilarityPipeline(ABC):
    """
    History-backed category ranker.

    Subclasses implement :meth:`_index` and :meth:`rank`; the base class
    tracks which category each stored report belongs to.
    """

    name = "pipeline"
    score_floor = 0.0

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.category_of: Dict[str, str] = {}

    def reset(self, history: Sequence[StackTrace]) -> None:
        """Drop all state and load ``history`` with its categories."""
        self.category_of = {}
        self._clear()
        self.add_many(history)

    def add_many(self, reports: Sequence[StackTrace]) -> None:
        for report in reports:
            self.add(report, report.category_id)

    def add(self, report: StackTrace, category_id: Optional[str]) -> None:
        if category_id is None:
            raise DataError(f"report '{report.report_id}' has no category to store")
        self.category_of[report.report_id] = category_id
        self._index(report, category_id)

    def add_copy(self, report: StackTrace, category_id: str, source_id: str) -> None:
        """Store ``report`` as content-identical to the stored ``source_id``."""
        self.add(report, category_id)

    def __len__(self) -> int:
        return len(self.category_of)

    @abstractmethod
    def _clear(self) -> None:
        """Forget every stored report."""

    @abstractmethod
    def _index(self, report: StackTrace, category_id: str) -> None:
        """Make ``report`` searchable."""

    @abstractmethod
    def rank(self, report: StackTrace) -> Ranking:
        """Rank stored categories for ``report``."""

    def _rank_hits(self, hits: List[Hit], ranking: Ranking) -> Ranking:
        ranking.hits = hits
        ranking.categories = category_scores(hits, self.category_of) if hits else []
        return ranking


class NeuralPipeline(SimilarityPipeline):
    """
    Embed the query, retrieve the top-K stored reports, optionally rerank them.

    Args:
        tokenizer: Trained tokenizer
        embedder: Frozen embedding model
        reranker: Frozen reranker, or None for retrieval only
        k: Candidates kept from retrieval
        search_mode: ``auto``, ``exact`` or ``ann``
        index_config: Graph parameters for the embedding store
    """

    score_floor = -1.0

    def __init__(self, tokenizer: TraceTokenizer, embedder: EmbedderModel,
                 reranker: Optional[RerankerModel] = None, k: int = 10, search_mode: str = "auto",
                 index_config: Optional[IndexConfig] = None, name: Optional[str] = None):
        super().__init__()
        self.tokenizer = tokenizer
        self.embedder = embedder
        self.reranker = reranker
        self.k = k
        self.search_mode = search_mode
        self.index_config = index_config or IndexConfig()
        self.name = name or ("reranked" if reranker is not None else "embedder")
        self.store = EmbeddingStore(embedder.embedding_dim, self.index_config)
        self.tokens: Dict[str, TokenizedTrace] = {}
        self._last: Optional[Tuple[str, np.ndarray]] = None

    def _clear(self) -> None:
        self.store = EmbeddingStore(self.embedder.embedding_dim, self.index_config)
        self.tokens = {}
        self._last = None

    def add_many(self, reports: Sequence[StackTrace]) -> None:
        if not reports:
            return
        encoded = self.tokenizer.encode_many(reports)
        vectors = embed_batch(encoded, self.embedder)
        for report, tokens, vector in zip(reports, encoded, vectors):
            if report.category_id is None:
                raise DataError(f"report '{report.report_id}' has no category to store")
            self.category_of[report.report_id] = report.category_id
            self.tokens[report.report_id] = tokens
            self.store.add(report.report_id, vector, report.category_id)
        self.logger.info(f"{self.name}: stored {len(self.store)} embeddings")

    def use_store(self, store: EmbeddingStore, history: Sequence[StackTrace]) -> None:
        """Adopt a prebuilt store whose entries match ``history``."""
        self.store = store
        self.category_of = {r.report_id: r.category_id for r in history}
        self.tokens = {r.report_id: self.tokenizer(r) for r in history}
        self._last = None

    def embed(self, report: StackTrace) -> Tuple[TokenizedTrace, np.ndarray]:
        tokens = self.tokenizer(report)
        vector = embed_batch([tokens], self.embedder)[0]
        self._last = (report.report_id, vector)
        return tokens, vector

    def _index(self, report: StackTrace, category_id: str) -> None:
        if self._last is not None and self._last[0] == report.report_id:
            tokens, vector = self.tokenizer(report), self._last[1]
        else:
            tokens, vector = self.embed(report)
        self.tokens[report.report_id] = tokens
        self.store.add(report.report_id, vector, category_id)

    def add_copy(self, report: StackTrace, category_id: str, source_id: str) -> None:
        if source_id not in self.store:
            self.add(report, category_id)
            return
        vector = self.store.vector_of(source_id)
        self.category_of[report.report_id] = category_id
        self.tokens[report.report_id] = self.tokens.get(source_id) or self.tokenizer(report)
        self.store.add(report.report_id, vector, category_id, normalized=True)

    def retrieve(self, report: StackTrace) -> Tuple[TokenizedTrace, List[Hit]]:
        tokens, vector = self.embed(report)
        if len(self.store) == 0:
            return tokens, []
        return tokens, self.store.search(vector, self.k, self.search_mode)

    def rank(self, report: StackTrace) -> Ranking:
        ranking = Ranking()
        start = time.perf_counter()
        tokens, hits = self.retrieve(report)
        ranking.retrieval_ms = _ms(start)
        if self.reranker is not None and hits:
            start = time.perf_counter()
            hits = rerank(tokens, [(rid, self.tokens[rid]) for rid, _ in hits], self.reranker)
            ranking.rerank_ms = _ms(start)
        return self._rank_hits(hits, ranking)


class LerchPipeline(SimilarityPipeline):
    """TF-IDF over whole frames."""

    name = "lerch"

    def __init__(self):
        super().__init__()
        self.index = TfIdfIndex()

    def _clear(self) -> None:
        self.index = TfIdfIndex()

    def _index(self, report: StackTrace, category_id: str) -> None:
        self.index.add(report.report_id, report.frame_keys)

    def rank(self, report: StackTrace) -> Ranking:
        ranking = Ranking()
        start = time.perf_counter()
        hits = self.index.rank(report) if self.index.n_documents else []
        ranking.retrieval_ms = _ms(start)
        return self._rank_hits(hits, ranking)


class StringSimilarityPipeline(SimilarityPipeline):
    """Exhaustive scan with a pairwise frame-sequence similarity."""

    def __init__(self, name: str, similarity: Callable[[Sequence[str], Sequence[str]], float]):
        super().__init__()
        self.name = name
        self.similarity = similarity
        self._ids: List[str] = []
        self._frames: List[Tuple[str, ...]] = []

    def _clear(self) -> None:
        self._ids, self._frames = [], []

    def _index(self, report: StackTrace, category_id: str) -> None:
        self._ids.append(report.report_id)
        self._frames.append(report.frame_keys)

    def rank(self, report: StackTrace) -> Ranking:
        ranking = Ranking()
        start = time.perf_counter()
        query = report.frame_keys
        scores = np.array([self.similarity(query, frames) for frames in self._frames])
        order = np.argsort(-scores, kind="stable") if len(scores) else []
        hits = [(self._ids[i], float(scores[i])) for i in order]
        ranking.retrieval_ms = _ms(start)
        return self._rank_hits(hits, ranking)


class RemotePipeline(SimilarityPipeline):
    """Remote embeddings with exact cosine retrieval."""

    name = "remote"
    score_floor = -1.0

    def __init__(self, client: RemoteEmbedderClient, k: int = 10):
        super().__init__()
        self.client = client
        self.k = k
        self.store: Optional[EmbeddingStore] = None

    def _clear(self) -> None:
        self.store = None

    def add_many(self, reports: Sequence[StackTrace]) -> None:
        for report, embedding in zip(reports, self.client.embed_many(reports)):
            self.add_vector(report, embedding.vector)

    def add_vector(self, report: StackTrace, vector: np.ndarray) -> None:
        if report.category_id is None:
            raise DataError(f"report '{report.report_id}' has no category to store")
        if self.store is None:
            self.store = EmbeddingStore(int(vector.shape[0]))
        self.category_of[report.report_id] = report.category_id
        self.store.add(report.report_id, vector, report.category_id)

    def _index(self, report: StackTrace, category_id: str) -> None:
        self.add_vector(report.with_category(category_id), self.client.embed(report).vector)

    def rank(self, report: StackTrace) -> Ranking:
        ranking = Ranking()
        start = time.perf_counter()
        vector = self.client.embed(report).vector
        hits = self.store.exact_search(vector, self.k) if self.store is not None and len(self.store) else []
        ranking.retrieval_ms = _ms(start)
        return self._rank_hits(hits, ranking)


def edit_pipeline() -> StringSimilarityPipeline:
    return StringSimilarityPipeline("edit", edit_similarity)


def prefix_pipeline() -> StringSimilarityPipeline:
    return StringSimilarityPipeline("prefix", prefix_similarity)


def lcs_pipeline() -> StringSimilarityPipeline:
    return StringSimilarityPipeline("lcs", lcs_similarity)


@dataclass
class DedupDecision:
    """Outcome of processing one incoming report."""
    report_id: str
    action: str
    category_id: str
    top_score: Optional[float]
    latency_ms: float
    model_invoked: bool

    def to_dict(self) -> Dict:
        return {
            "report_id": self.report_id,
            "action": self.action,
            "category_id": self.category_id,
            "top_score": self.top_score,
            "latency_ms": round(self.latency_ms, 3),
            "model_invoked": self.model_invoked,
        }


class DedupEngine:
    """
    Online deduplication over a pipeline and a category store.

    Identical content attaches to the existing category without touching the
    models. Otherwise the top-ranked category is taken when its score is
    strictly above the threshold, and a fresh ``new-<n>`` category is created
    when it is not. Every processed report is added to the state with the
    engine's own decision.
    """

    def __init__(self, pipeline: SimilarityPipeline, threshold: float, categories):
        self.pipeline = pipeline
        self.threshold = threshold
        self.categories = categories
        self.logger = logging.getLogger(__name__)

    def process(self, report: StackTrace) -> DedupDecision:
        start = time.perf_counter()
        digest = content_hash(report)
        existing = self.categories.category_for_hash(digest)
        if existing is not None:
            source = self.categories.report_for_hash(digest)
            self.categories.attach(existing, report.report_id, digest)
            self.pipeline.add_copy(report, existing, source)
            return DedupDecision(report.report_id, "attach", existing, None, _ms(start), False)

        ranking = self.pipeline.rank(report)
        if ranking.hits:
            decision: Decision = decide(ranking.hits, self.threshold, self.pipeline.category_of)
        else:
            decision = Decision(attach=False, category_id=None, score=self.pipeline.score_floor)
        if decision.attach:
            category_id = decision.category_id
            self.categories.attach(category_id, report.report_id, digest)
            action = "attach"
        else:
            category_id = self.categories.create(report.report_id, digest, created_by="engine")
            action = "new"
        self.pipeline.add(report, category_id)
        top = ranking.top_score
        return DedupDecision(report.report_id, action, category_id, top, _ms(start), True)

    def process_many(self, reports: Iterable[StackTrace]) -> List[DedupDecision]:
        return [self.process(r) for r in reports]
