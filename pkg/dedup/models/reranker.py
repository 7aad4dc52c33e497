"""
Cross-encoder reranker.

Scores a (query, candidate) pair: frames present in both traces get a
learned significance vector added to their frame embedding, each trace is
encoded separately, and an MLP maps the concatenated trace vectors to a
single unbounded score.
"""

import copy
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from dedup.config.schema import RerankerConfig
from dedup.core.dataset import DatasetSplit
from dedup.core.trace import StackTrace
from dedup.exceptions import DataError, ModelError
from dedup.models.embedder import TraceEncoder
from dedup.models.nn import Adam, Mlp, backward, load_state, read_weights, save_weights, set_seed
from dedup.models.sampling import Triplet, sample_triplets
from dedup.modules.tokenizer import TokenizedTrace, TraceTokenizer

logger = logging.getLogger(__name__)

TokenTriplet = Tuple[TokenizedTrace, TokenizedTrace, TokenizedTrace]


@dataclass(frozen=True)
class Decision:
    """Outcome of thresholding the top-ranked candidate."""
    attach: bool
    category_id: Optional[str]
    score: float
    report_id: Optional[str] = None


def mark_shared_frames(q: TokenizedTrace, k: TokenizedTrace) -> Tuple[List[bool], List[bool]]:
    """Flag every frame occurrence whose normalized string also appears in the other trace."""
    if len(q.frame_keys) == 0 or len(k.frame_keys) == 0:
        raise ModelError("mark_shared_frames needs two non-empty traces")
    shared = set(q.frame_keys) & set(k.frame_keys)
    return [key in shared for key in q.frame_keys], [key in shared for key in k.frame_keys]


class RerankerModel(nn.Module):
    """Pairwise scorer with its own token table and encoders."""

    model_kind = "reranker"

    def __init__(self, vocab_size: int, d_tok: int = 100, hidden_dim: int = 100,
                 mlp_hidden: Sequence[int] = (256, 64)):
        super().__init__()
        self.hyperparameters = {
            "vocab_size": vocab_size,
            "d_tok": d_tok,
            "hidden_dim": hidden_dim,
            "mlp_hidden": list(mlp_hidden),
        }
        self.encoder = TraceEncoder(vocab_size, d_tok, hidden_dim, "concat")
        self.significance = nn.Parameter(torch.zeros(self.encoder.frame_dim))
        self.mlp = Mlp([2 * self.encoder.output_dim] + list(mlp_hidden) + [1])

    @classmethod
    def from_config(cls, vocab_size: int, config: RerankerConfig) -> "RerankerModel":
        return cls(vocab_size, config.d_tok, config.hidden_dim, config.mlp_hidden)

    def score_pairs(self, queries: Sequence[TokenizedTrace], candidates: Sequence[TokenizedTrace]) -> torch.Tensor:
        """Scores ``[n]`` for parallel lists of queries and candidates."""
        if len(queries) != len(candidates):
            raise ModelError("queries and candidates must have the same length")
        if not queries:
            return torch.zeros(0)
        n = len(queries)
        sequences = self.encoder.frame_sequences(list(queries) + list(candidates))
        for i in range(n):
            flags_q, flags_k = mark_shared_frames(queries[i], candidates[i])
            sequences[i] = self._mark(sequences[i], flags_q)
            sequences[n + i] = self._mark(sequences[n + i], flags_k)
        vectors = self.encoder.encode_sequences(sequences)
        return self.mlp(torch.cat([vectors[:n], vectors[n:]], dim=-1)).squeeze(-1)

    def _mark(self, frames: torch.Tensor, flags: Sequence[bool]) -> torch.Tensor:
        mask = torch.tensor(flags, dtype=frames.dtype).unsqueeze(-1)
        return frames + mask * self.significance

    def forward(self, queries: Sequence[TokenizedTrace], candidates: Sequence[TokenizedTrace]) -> torch.Tensor:
        return self.score_pairs(queries, candidates)

    def save(self, path) -> None:
        save_weights(path, self, self.model_kind, self.hyperparameters)

    @classmethod
    def load(cls, path) -> "RerankerModel":
        hyperparameters, tensors = read_weights(path, cls.model_kind)
        model = cls(**hyperparameters)
        load_state(model, tensors)
        model.eval()
        return model


def score_pair(q: TokenizedTrace, k: TokenizedTrace, model: RerankerModel) -> float:
    """Similarity score of one pair; higher means more similar."""
    with torch.no_grad():
        return float(model.score_pairs([q], [k])[0])


def bce_from_scores(positive: torch.Tensor, negative: torch.Tensor) -> torch.Tensor:
    """``log(1 + e^-s_p) + log(1 + e^s_n)``, averaged when given batches."""
    return (F.softplus(-positive) + F.softplus(negative)).mean()


def bce_triplet_loss(triplet: TokenTriplet, model: RerankerModel) -> torch.Tensor:
    """Binary cross-entropy loss of one (anchor, positive, negative) triplet."""
    return bce_batch_loss([triplet], model)


def bce_batch_loss(triplets: Sequence[TokenTriplet], model: RerankerModel) -> torch.Tensor:
    """Mean triplet loss with both pair scores computed in one pass."""
    if not triplets:
        raise ModelError("empty triplet batch")
    anchors = [t[0] for t in triplets]
    scores = model.score_pairs(anchors + anchors, [t[1] for t in triplets] + [t[2] for t in triplets])
    n = len(triplets)
    return bce_from_scores(scores[:n], scores[n:])


def rerank(q: TokenizedTrace, candidates: Sequence[Tuple[str, TokenizedTrace]],
           model: RerankerModel) -> List[Tuple[str, float]]:
    """
    Re-order retrieval candidates by reranker score.

    Args:
        q: Query trace
        candidates: ``(report_id, trace)`` in retrieval order
        model: Frozen reranker

    Returns:
        ``(report_id, score)`` sorted by descending score; equal scores keep
        retrieval order
    """
    if not candidates:
        raise ModelError("rerank needs at least one candidate")
    scores = [score_pair(q, trace, model) for _, trace in candidates]
    ranked = sorted(enumerate(scores), key=lambda item: -item[1])
    return [(candidates[i][0], float(score)) for i, score in ranked]


def decide(ranked: Sequence[Tuple[str, float]], threshold: float,
           category_of: Mapping[str, str]) -> Decision:
    """Attach to the top hit's category iff its score is strictly above ``threshold``."""
    if not ranked:
        raise ModelError("decide needs a non-empty ranking")
    report_id, score = ranked[0]
    if score > threshold:
        return Decision(attach=True, category_id=category_of[report_id], score=float(score), report_id=report_id)
    return Decision(attach=False, category_id=None, score=float(score), report_id=report_id)


def triplet_accuracy(model: RerankerModel, triplets: Sequence[TokenTriplet], batch_size: int = 64) -> float:
    """Share of triplets where the positive outscores the negative."""
    if not triplets:
        return 0.0
    correct = 0
    with torch.no_grad():
        for start in range(0, len(triplets), batch_size):
            chunk = triplets[start:start + batch_size]
            anchors = [t[0] for t in chunk]
            scores = model.score_pairs(anchors + anchors, [t[1] for t in chunk] + [t[2] for t in chunk])
            correct += int((scores[:len(chunk)] > scores[len(chunk):]).sum())
    return correct / len(triplets)


def train_reranker(
    split: DatasetSplit,
    tokenizer: TraceTokenizer,
    config: RerankerConfig,
) -> Tuple[RerankerModel, Dict[str, Any]]:
    """
    Train the reranker on BCE triplets.

    Validation triplets come from the validation split; when it cannot supply
    them (fewer than two categories with pairs) training runs all epochs and
    keeps the last weights.

    Returns:
        The selected model and a training history dictionary
    """
    set_seed(config.seed)
    model = RerankerModel.from_config(tokenizer.vocab.size, config)
    history: Dict[str, Any] = {"epochs": [], "best_epoch": 0}
    if config.max_epochs == 0:
        model.eval()
        return model, history

    cache: Dict[str, TokenizedTrace] = {}

    def encoded(triplets: Sequence[Triplet]) -> List[TokenTriplet]:
        out = []
        for triplet in triplets:
            row = []
            for report in triplet:
                if report.report_id not in cache:
                    cache[report.report_id] = tokenizer(report)
                row.append(cache[report.report_id])
            out.append(tuple(row))
        return out

    train_triplets = encoded(sample_triplets(split.train, config.max_pairs_per_category, config.seed))
    try:
        val_triplets = encoded(sample_triplets(split.validation, config.max_pairs_per_category, config.seed))
    except DataError as e:
        logger.warning(f"No reranker validation triplets ({e}); keeping the last epoch")
        val_triplets = []

    best_acc = triplet_accuracy(model, val_triplets) if val_triplets else -1.0
    best_state = copy.deepcopy(model.state_dict())
    optimizer = Adam(model.parameters(), lr=config.lr)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = np.random.default_rng(config.seed + epoch).permutation(len(train_triplets))
        losses = []
        batches = range(0, len(order), config.batch_size)
        for start in tqdm(batches, desc=f"Reranker epoch {epoch}", leave=False):
            batch = [train_triplets[i] for i in order[start:start + config.batch_size]]
            loss = bce_batch_loss(batch, model)
            backward(loss, model.parameters())
            optimizer.step()
            losses.append(float(loss.detach()))

        mean_loss = float(np.mean(losses))
        entry = {"epoch": epoch, "loss": mean_loss}
        if not val_triplets:
            history["epochs"].append(entry)
            history["best_epoch"] = epoch
            logger.info(f"Reranker epoch {epoch}: loss={mean_loss:.4f}")
            continue

        acc = triplet_accuracy(model, val_triplets)
        entry["val_accuracy"] = acc
        history["epochs"].append(entry)
        logger.info(f"Reranker epoch {epoch}: loss={mean_loss:.4f} val_accuracy={acc:.4f}")
        if acc > best_acc:
            best_acc = acc
            best_state = copy.deepcopy(model.state_dict())
            history["best_epoch"] = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Early stopping after {epoch} epochs (best epoch {history['best_epoch']})")
                break

    if val_triplets:
        model.load_state_dict(best_state)
        history["best_accuracy"] = best_acc
    model.eval()
    return model, history
