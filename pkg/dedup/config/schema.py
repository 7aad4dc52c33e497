"""
Configuration schema definitions with validation.
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class LoggingConfig(BaseModel):
    """Logging configuration schema."""
    level: str = Field(
        default="INFO",
        description="Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)"
    )
    file: Optional[str] = Field(
        default=None,
        description="Path to log file (None for console-only)"
    )
    max_size_mb: int = Field(
        default=10,
        description="Maximum log file size in megabytes before rotation",
        ge=1
    )
    backup_count: int = Field(
        default=5,
        description="Number of backup log files to keep",
        ge=0
    )

    @field_validator('level')
    @classmethod
    def validate_level(cls, v):
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()


class TokenizerConfig(BaseModel):
    """Frame splitting and BPE settings."""
    vocab_size: int = Field(
        default=10000,
        description="Upper bound on the BPE vocabulary, reserved ids included",
        ge=3
    )
    max_frames: int = Field(
        default=128,
        description="Frames kept per trace, counted from the top of the stack",
        ge=1
    )
    max_tokens_per_frame: int = Field(
        default=32,
        description="Tokens kept per frame",
        ge=1
    )


class EmbedderConfig(BaseModel):
    """Embedding model and InfoNCE training settings."""
    d_tok: int = Field(default=100, description="Token embedding width", ge=1)
    hidden_dim: int = Field(default=100, description="LSTM hidden width per direction", ge=1)
    aggregation: Literal["avg", "max", "hidden", "concat"] = Field(
        default="concat",
        description="How biLSTM outputs are pooled into one vector"
    )
    temperature: float = Field(default=0.05, description="InfoNCE temperature", gt=0)
    infonce_literal: bool = Field(
        default=False,
        description="Drop the positive term from the InfoNCE denominator"
    )
    batch_size: int = Field(default=64, description="Pairs per batch", ge=2)
    max_pairs_per_category: int = Field(default=100, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    patience: int = Field(default=3, ge=1)
    max_epochs: int = Field(default=20, ge=0)
    seed: int = Field(default=42)
    debug_finite: bool = Field(
        default=False,
        description="Check every forward output for NaN/inf"
    )


class RerankerConfig(BaseModel):
    """Cross-encoder settings and BCE triplet training."""
    d_tok: int = Field(default=100, ge=1)
    hidden_dim: int = Field(default=100, ge=1)
    mlp_hidden: List[int] = Field(default=[256, 64], description="Hidden MLP layer sizes")
    batch_size: int = Field(default=32, ge=1)
    max_pairs_per_category: int = Field(default=100, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    patience: int = Field(default=3, ge=1)
    max_epochs: int = Field(default=10, ge=0)
    seed: int = Field(default=43)


class IndexConfig(BaseModel):
    """Embedding store and small-world graph parameters."""
    m: int = Field(default=16, description="Max neighbours per node above layer 0", ge=2)
    ef_construction: int = Field(default=200, ge=1)
    ef_search: int = Field(default=64, ge=1)
    exact_threshold: int = Field(
        default=50000,
        description="Store size from which 'auto' search mode switches to the graph",
        ge=1
    )
    seed: int = Field(default=7)


class PipelineConfig(BaseModel):
    """Online pipeline toggles."""
    use_reranker: bool = Field(default=True)
    k: int = Field(default=10, description="Candidates passed to the reranker", ge=1)
    search_mode: Literal["auto", "exact", "ann"] = Field(default="auto")


class EvalConfig(BaseModel):
    """Evaluation protocol settings."""
    ratios: List[float] = Field(default=[0.7, 0.1, 0.2])
    pipelines: List[str] = Field(default=["embedder", "reranked", "lerch", "edit"])
    warmup_queries: int = Field(default=5, ge=0)
    dump_events: bool = Field(default=False)

    @field_validator('ratios')
    @classmethod
    def validate_ratios(cls, v):
        if len(v) != 3 or any(r <= 0 for r in v) or abs(sum(v) - 1.0) > 1e-6:
            raise ValueError("ratios must be three positive numbers summing to 1")
        return v


class BenchConfig(BaseModel):
    """Latency benchmark settings."""
    repeats: int = Field(default=3, ge=1)
    memory_fraction: float = Field(
        default=0.8,
        description="Share of available memory a benchmark store may take",
        gt=0,
        le=1
    )


class RemoteConfig(BaseModel):
    """Remote embeddings-API client."""
    enabled: bool = Field(default=False)
    endpoint: Optional[str] = Field(default=None)
    api_key: Optional[str] = Field(default=None)
    model: str = Field(default="text-embedding-3-small")
    timeout: float = Field(default=30.0, gt=0)
    max_retries: int = Field(default=3, ge=0)
    backoff_factor: float = Field(default=0.5, ge=0)
    parallelism: int = Field(default=4, ge=1)
    dimension: Optional[int] = Field(default=None, ge=1)
    cache_file: Optional[str] = Field(default=None)


class DedupConfig(BaseModel):
    """Root configuration."""
    profile: str = Field(default="default")
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)
    embedder: EmbedderConfig = Field(default_factory=EmbedderConfig)
    reranker: RerankerConfig = Field(default_factory=RerankerConfig)
    index: IndexConfig = Field(default_factory=IndexConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    remote: RemoteConfig = Field(default_factory=RemoteConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @model_validator(mode="after")
    def check_remote(self):
        if self.remote.enabled and not self.remote.endpoint:
            raise ValueError("remote.enabled requires remote.endpoint")
        return self
