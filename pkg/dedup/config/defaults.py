"""
Default configuration values for the deduplication engine.
"""
from pathlib import Path

DEFAULT_CONFIG = {
    "profile": "default",
    "tokenizer": {
        "vocab_size": 10000,
        "max_frames": 128,
        "max_tokens_per_frame": 32,
    },
    "embedder": {
        "d_tok": 100,
        "hidden_dim": 100,
        "aggregation": "concat",
        "temperature": 0.05,
        "infonce_literal": False,
        "batch_size": 64,
        "max_pairs_per_category": 100,
        "lr": 1e-3,
        "patience": 3,
        "max_epochs": 20,
        "seed": 42,
        "debug_finite": False,
    },
    "reranker": {
        "d_tok": 100,
        "hidden_dim": 100,
        "mlp_hidden": [256, 64],
        "batch_size": 32,
        "max_pairs_per_category": 100,
        "lr": 1e-3,
        "patience": 3,
        "max_epochs": 10,
        "seed": 43,
    },
    "index": {
        "m": 16,
        "ef_construction": 200,
        "ef_search": 64,
        "exact_threshold": 50000,
        "seed": 7,
    },
    "pipeline": {
        "use_reranker": True,
        "k": 10,
        "search_mode": "auto",
    },
    "eval": {
        "ratios": [0.7, 0.1, 0.2],
        "pipelines": ["embedder", "reranked", "lerch", "edit"],
        "warmup_queries": 5,
        "dump_events": False,
    },
    "bench": {
        "repeats": 3,
        "memory_fraction": 0.8,
    },
    "remote": {
        "enabled": False,
        "endpoint": None,
        "api_key": None,
        "model": "text-embedding-3-small",
        "timeout": 30.0,
        "max_retries": 3,
        "backoff_factor": 0.5,
        "parallelism": 4,
        "dimension": None,
        "cache_file": None,
    },
    "logging": {
        "level": "INFO",
        "file": None,
        "max_size_mb": 10,
        "backup_count": 5,
    },
}

DEFAULT_PATHS = {
    "config_file": Path("config/config.yaml"),
    "profiles_dir": Path("config/profiles"),
    "state_dir": Path("state"),
}

# Profiles layered on top of the file configuration
CONFIG_PROFILES = {
    "default": {},

    # Small models that train in seconds; used by the test-suite
    "development": {
        "tokenizer": {"vocab_size": 600, "max_frames": 64, "max_tokens_per_frame": 12},
        "embedder": {"d_tok": 24, "hidden_dim": 24, "batch_size": 32,
                     "max_pairs_per_category": 30, "max_epochs": 6, "lr": 5e-3},
        "reranker": {"d_tok": 16, "hidden_dim": 16, "mlp_hidden": [32, 16],
                     "max_pairs_per_category": 20, "max_epochs": 3, "lr": 5e-3},
        "logging": {"level": "DEBUG"},
    },
}

# Environment variable mappings to configuration paths
ENV_VAR_MAPPINGS = {
    "REMOTE_EMBED_ENDPOINT": "remote.endpoint",
    "REMOTE_EMBED_KEY": "remote.api_key",
    "REMOTE_EMBED_MODEL": "remote.model",
    "DEDUP_LOG_LEVEL": "logging.level",
    "DEDUP_SEED": "embedder.seed",
}
