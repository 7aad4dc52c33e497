"""
Embedding model: tokens to frame vectors to a trace vector.

A token-level biLSTM encodes each frame; a frame-level biLSTM encodes the
sequence of frame vectors. Both levels pool their outputs with the same
aggregation. Training uses InfoNCE with in-batch negatives.
"""

import copy
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pad_sequence
from tqdm import tqdm

from dedup.config.schema import EmbedderConfig
from dedup.core.dataset import DatasetSplit
from dedup.core.trace import StackTrace
from dedup.exceptions import DataError, ModelError
from dedup.models.nn import (
    Adam,
    BiLstmLayer,
    aggregate,
    aggregation_width,
    backward,
    check_finite,
    load_state,
    read_weights,
    save_weights,
    set_seed,
)
from dedup.models.sampling import Pair, build_batches, sample_training_pairs
from dedup.modules.tokenizer import PAD_ID, TokenizedTrace, TraceTokenizer

logger = logging.getLogger(__name__)


@dataclass
class TraceEmbedding:
    """Fixed-width trace vector."""
    vector: np.ndarray
    report_id: Optional[str] = None

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def collate_frames(traces: Sequence[TokenizedTrace]) -> Tuple[torch.Tensor, torch.Tensor, List[int]]:
    """
    Flatten the frames of a batch of traces into one padded token matrix.

    Returns:
        Token ids ``[frames, max_tokens]``, token counts ``[frames]`` and the
        number of frames contributed by each trace
    """
    sequences = []
    counts = []
    for trace in traces:
        if len(trace.frames) == 0:
            raise ModelError("cannot encode a trace without frames")
        counts.append(len(trace.frames))
        for tokens in trace.frames:
            if len(tokens) == 0:
                raise ModelError("cannot encode a frame without tokens")
            sequences.append(torch.tensor(tokens, dtype=torch.long))
    token_ids = pad_sequence(sequences, batch_first=True, padding_value=PAD_ID)
    lengths = torch.tensor([len(s) for s in sequences], dtype=torch.long)
    return token_ids, lengths, counts


class TraceEncoder(nn.Module):
    """Two-level biLSTM encoder shared by the embedding model and the reranker."""

    def __init__(self, vocab_size: int, d_tok: int, hidden_dim: int, aggregation: str = "concat",
                 debug_finite: bool = False):
        super().__init__()
        self.aggregation = aggregation
        self.debug_finite = debug_finite
        self.frame_dim = aggregation_width(hidden_dim, aggregation)
        self.output_dim = aggregation_width(hidden_dim, aggregation)

        self.token_embedding = nn.Embedding(vocab_size, d_tok, padding_idx=PAD_ID)
        self.frame_lstm = BiLstmLayer(d_tok, hidden_dim)
        self.trace_lstm = BiLstmLayer(self.frame_dim, hidden_dim)
        with torch.no_grad():
            bound = 1.0 / np.sqrt(d_tok)
            self.token_embedding.weight.uniform_(-bound, bound)
            self.token_embedding.weight[PAD_ID].zero_()

    def encode_frames(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Frame vectors ``[frames, frame_dim]`` from padded token ids."""
        embedded = self.token_embedding(token_ids)
        outputs, final_hidden = self.frame_lstm(embedded, lengths)
        vectors = aggregate(outputs, lengths, final_hidden, self.aggregation)
        if self.debug_finite:
            check_finite(vectors, "frame vectors")
        return vectors

    def encode_sequences(self, frame_vectors: Sequence[torch.Tensor]) -> torch.Tensor:
        """Trace vectors ``[batch, output_dim]`` from per-trace frame-vector sequences."""
        lengths = torch.tensor([v.shape[0] for v in frame_vectors], dtype=torch.long)
        padded = pad_sequence(list(frame_vectors), batch_first=True)
        outputs, final_hidden = self.trace_lstm(padded, lengths)
        vectors = aggregate(outputs, lengths, final_hidden, self.aggregation)
        if self.debug_finite:
            check_finite(vectors, "trace vectors")
        return vectors

    def frame_sequences(self, traces: Sequence[TokenizedTrace]) -> List[torch.Tensor]:
        """Frame-vector sequence of each trace."""
        token_ids, lengths, counts = collate_frames(traces)
        frames = self.encode_frames(token_ids, lengths)
        return list(torch.split(frames, counts))

    def forward(self, traces: Sequence[TokenizedTrace]) -> torch.Tensor:
        return self.encode_sequences(self.frame_sequences(traces))


class EmbedderModel(nn.Module):
    """Bi-encoder producing one vector per trace."""

    model_kind = "embedder"

    def __init__(self, vocab_size: int, d_tok: int = 100, hidden_dim: int = 100,
                 aggregation: str = "concat", debug_finite: bool = False):
        super().__init__()
        self.hyperparameters = {
            "vocab_size": vocab_size,
            "d_tok": d_tok,
            "hidden_dim": hidden_dim,
            "aggregation": aggregation,
        }
        self.encoder = TraceEncoder(vocab_size, d_tok, hidden_dim, aggregation, debug_finite)

    @classmethod
    def from_config(cls, vocab_size: int, config: EmbedderConfig) -> "EmbedderModel":
        return cls(vocab_size, config.d_tok, config.hidden_dim, config.aggregation, config.debug_finite)

    @property
    def embedding_dim(self) -> int:
        return self.encoder.output_dim

    def forward(self, traces: Sequence[TokenizedTrace]) -> torch.Tensor:
        return self.encoder(traces)

    def save(self, path) -> None:
        save_weights(path, self, self.model_kind, self.hyperparameters)

    @classmethod
    def load(cls, path) -> "EmbedderModel":
        hyperparameters, tensors = read_weights(path, cls.model_kind)
        model = cls(**hyperparameters)
        load_state(model, tensors)
        model.eval()
        return model


def embed_frame(tokens: Sequence[int], model: EmbedderModel) -> torch.Tensor:
    """Vector of a single frame given its token ids."""
    if len(tokens) == 0:
        raise ModelError("embed_frame needs at least one token")
    token_ids = torch.tensor([list(tokens)], dtype=torch.long)
    lengths = torch.tensor([len(tokens)], dtype=torch.long)
    return model.encoder.encode_frames(token_ids, lengths)[0]


def embed_trace(trace: TokenizedTrace, model: EmbedderModel) -> TraceEmbedding:
    """Embed one trace with a frozen model."""
    if len(trace.frames) == 0:
        raise ModelError("embed_trace needs at least one frame")
    with torch.no_grad():
        vector = model([trace])[0]
    return TraceEmbedding(vector.cpu().numpy().astype(np.float32), trace.report_id)


def embed_batch(traces: Sequence[TokenizedTrace], model: EmbedderModel, batch_size: int = 128) -> np.ndarray:
    """Embed many traces; returns ``[n, embedding_dim]`` float32."""
    if not traces:
        return np.zeros((0, model.embedding_dim), dtype=np.float32)
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(traces), batch_size):
            chunks.append(model(traces[start:start + batch_size]).cpu().numpy())
    model.train(was_training)
    return np.concatenate(chunks).astype(np.float32)


def similarity(a: TraceEmbedding, b: TraceEmbedding) -> float:
    """Cosine similarity of two embeddings."""
    x = np.asarray(a.vector, dtype=np.float64)
    y = np.asarray(b.vector, dtype=np.float64)
    if x.shape != y.shape:
        raise ModelError(f"embedding widths differ: {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ModelError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def info_nce_from_embeddings(anchors: torch.Tensor, positives: torch.Tensor, temperature: float,
                             literal: bool = False) -> torch.Tensor:
    """
    InfoNCE over a batch where the other rows' positives are the negatives.

    Args:
        anchors: ``[N, d]``
        positives: ``[N, d]``
        temperature: Softmax temperature τ > 0
        literal: Leave the positive term out of the denominator

    Returns:
        Mean loss over anchors
    """
    if anchors.shape != positives.shape or anchors.dim() != 2:
        raise ModelError(f"anchor/positive shapes differ: {list(anchors.shape)} vs {list(positives.shape)}")
    if anchors.shape[0] < 2:
        raise ModelError("InfoNCE needs a batch of at least two pairs")
    if temperature <= 0:
        raise ModelError("temperature must be positive")

    logits = F.normalize(anchors, dim=1) @ F.normalize(positives, dim=1).T / temperature
    targets = torch.arange(anchors.shape[0])
    if not literal:
        return F.cross_entropy(logits, targets)
    positive_logits = logits.diagonal()
    eye = torch.eye(anchors.shape[0], dtype=torch.bool)
    negative_logits = logits.masked_fill(eye, float("-inf"))
    return (torch.logsumexp(negative_logits, dim=1) - positive_logits).mean()


def info_nce_loss(anchors: Sequence[TokenizedTrace], positives: Sequence[TokenizedTrace], model: EmbedderModel,
                  temperature: float, literal: bool = False) -> torch.Tensor:
    """InfoNCE loss of a batch of anchor/positive traces through ``model``."""
    if len(anchors) != len(positives):
        raise ModelError("anchors and positives must have the same length")
    if len(anchors) < 2:
        raise ModelError("InfoNCE needs a batch of at least two pairs")
    vectors = model(list(anchors) + list(positives))
    n = len(anchors)
    return info_nce_from_embeddings(vectors[:n], vectors[n:], temperature, literal)


def category_mrr(query_vectors: np.ndarray, query_categories: Sequence[str],
                 history_vectors: np.ndarray, history_categories: Sequence[str]) -> float:
    """
    Mean reciprocal rank of the true category.

    Categories are ranked by their best member similarity; queries whose
    category is absent from the history are ignored.
    """
    names = sorted(set(history_categories))
    lookup = {c: i for i, c in enumerate(names)}
    member_index = np.array([lookup[c] for c in history_categories])

    def _unit(m: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return m / np.maximum(norms, 1e-12)

    sims = _unit(query_vectors) @ _unit(history_vectors).T
    reciprocal = []
    for row, category in zip(sims, query_categories):
        if category not in lookup:
            continue
        scores = np.full(len(names), -np.inf)
        np.maximum.at(scores, member_index, row)
        rank = 1 + int(np.sum(scores > scores[lookup[category]]))
        reciprocal.append(1.0 / rank)
    return float(np.mean(reciprocal)) if reciprocal else 0.0


def validation_mrr(model: EmbedderModel, train: Sequence[TokenizedTrace], train_categories: Sequence[str],
                   validation: Sequence[TokenizedTrace], validation_categories: Sequence[str]) -> float:
    """Retrieval MRR of validation reports against the training reports."""
    if not train or not validation:
        return 0.0
    return category_mrr(embed_batch(validation, model), validation_categories,
                        embed_batch(train, model), train_categories)


def train_embedder(
    split: DatasetSplit,
    tokenizer: TraceTokenizer,
    config: EmbedderConfig,
) -> Tuple[EmbedderModel, Dict[str, Any]]:
    """
    Train the embedding model with InfoNCE and early stopping on validation MRR.

    Args:
        split: Chronological split; only train and validation are used
        tokenizer: Tokenizer trained on the train split
        config: Embedder settings

    Returns:
        The best-validation model and a training history dictionary
    """
    set_seed(config.seed)
    model = EmbedderModel.from_config(tokenizer.vocab.size, config)
    history: Dict[str, Any] = {"epochs": [], "best_epoch": 0}
    if config.max_epochs == 0:
        model.eval()
        return model, history

    pairs = sample_training_pairs(split.train, config.max_pairs_per_category, config.seed)
    cache: Dict[str, TokenizedTrace] = {}

    def encoded(report: StackTrace) -> TokenizedTrace:
        if report.report_id not in cache:
            cache[report.report_id] = tokenizer(report)
        return cache[report.report_id]

    labelled_train = [r for r in split.train if r.category_id is not None]
    labelled_val = [r for r in split.validation if r.category_id is not None]
    train_tok = [encoded(r) for r in labelled_train]
    train_cats = [r.category_id for r in labelled_train]
    val_tok = [encoded(r) for r in labelled_val]
    val_cats = [r.category_id for r in labelled_val]

    best_mrr = validation_mrr(model, train_tok, train_cats, val_tok, val_cats)
    best_state = copy.deepcopy(model.state_dict())
    history["initial_mrr"] = best_mrr
    logger.info(f"Untrained validation MRR: {best_mrr:.4f}")

    optimizer = Adam(model.parameters(), lr=config.lr)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        shuffled: List[Pair] = list(pairs)
        np.random.default_rng(config.seed + epoch).shuffle(shuffled)
        batches = build_batches(shuffled, config.batch_size)
        if not batches:
            raise DataError("training pairs cover fewer than two categories; cannot form in-batch negatives")

        losses = []
        for batch in tqdm(batches, desc=f"Embedder epoch {epoch}", leave=False):
            loss = info_nce_loss([encoded(a) for a, _ in batch], [encoded(p) for _, p in batch],
                                 model, config.temperature, config.infonce_literal)
            backward(loss, model.parameters())
            optimizer.step()
            losses.append(float(loss.detach()))

        mrr = validation_mrr(model, train_tok, train_cats, val_tok, val_cats)
        mean_loss = float(np.mean(losses))
        history["epochs"].append({"epoch": epoch, "loss": mean_loss, "val_mrr": mrr})
        logger.info(f"Embedder epoch {epoch}: loss={mean_loss:.4f} val_mrr={mrr:.4f}")

        if mrr > best_mrr:
            best_mrr = mrr
            best_state = copy.deepcopy(model.state_dict())
            history["best_epoch"] = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Early stopping after {epoch} epochs (best epoch {history['best_epoch']})")
                break

    model.load_state_dict(best_state)
    model.eval()
    history["best_mrr"] = best_mrr
    return model, history
