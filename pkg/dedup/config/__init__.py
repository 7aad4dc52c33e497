"""
Configuration module for the deduplication engine.
"""
from pathlib import Path
from typing import Any, Dict, Optional

from dedup.config.base import ConfigManager, load_snapshot
from dedup.config.schema import (
    BenchConfig,
    DedupConfig,
    EmbedderConfig,
    EvalConfig,
    IndexConfig,
    LoggingConfig,
    PipelineConfig,
    RemoteConfig,
    RerankerConfig,
    TokenizerConfig,
)


def load_config(
    config_path: Optional[Path] = None,
    profile: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> DedupConfig:
    """
    Load and validate configuration.

    Args:
        config_path: Path to configuration file
        profile: Profile name
        overrides: Dotted-key overrides

    Returns:
        DedupConfig object
    """
    return ConfigManager(config_path, profile=profile, overrides=overrides).config


__all__ = [
    'ConfigManager',
    'load_config',
    'load_snapshot',
    'DedupConfig',
    'TokenizerConfig',
    'EmbedderConfig',
    'RerankerConfig',
    'IndexConfig',
    'PipelineConfig',
    'EvalConfig',
    'BenchConfig',
    'RemoteConfig',
    'LoggingConfig',
]
