"""
Configuration management for the deduplication engine.
"""
import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from pydantic import ValidationError
from yaml.parser import ParserError

from dedup.config.defaults import (
    CONFIG_PROFILES,
    DEFAULT_CONFIG,
    DEFAULT_PATHS,
    ENV_VAR_MAPPINGS,
)
from dedup.config.schema import DedupConfig
from dedup.exceptions import ConfigError

logger = logging.getLogger(__name__)


class ConfigManager:
    """Configuration manager: defaults, file, profile, environment, overrides."""

    def __init__(
        self,
        config_path: Optional[Path] = None,
        profile: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        profiles_dir: Optional[Path] = None,
        apply_profile: bool = True,
    ):
        """
        Initialize the configuration manager.

        Args:
            config_path: Path to the YAML configuration file
            profile: Profile name; overrides the file's ``profile`` key
            overrides: Dotted-key overrides applied last (e.g. from CLI flags)
            profiles_dir: Directory holding ``<profile>.yaml`` files
            apply_profile: False when loading an already-merged snapshot
        """
        self.config_path = Path(config_path) if config_path else DEFAULT_PATHS["config_file"]
        self.profiles_dir = Path(profiles_dir) if profiles_dir else DEFAULT_PATHS["profiles_dir"]
        self.profile = profile
        self.overrides = dict(overrides or {})
        self.apply_profile = apply_profile
        self._config_data: Dict[str, Any] = {}
        self._config: Optional[DedupConfig] = None
        self.reload()

    @property
    def config(self) -> DedupConfig:
        """Validated configuration object."""
        return self._config

    def reload(self) -> None:
        """Reload the configuration from file, profile and environment."""
        self._config_data = copy.deepcopy(DEFAULT_CONFIG)

        self._load_from_file()
        if self.profile:
            self._config_data["profile"] = self.profile
        if self.apply_profile:
            self._apply_profile()
        self._load_from_env()
        for key, value in self.overrides.items():
            self._set_path(key, value)

        self._validate_config()
        logger.debug(f"Configuration loaded (profile={self._config.profile})")

    def _load_from_file(self) -> None:
        """Load configuration from file, if present."""
        if not self.config_path.exists():
            logger.debug(f"Configuration file not found at {self.config_path}, using defaults")
            return
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                file_config = yaml.safe_load(f)
        except (ParserError, yaml.YAMLError, IOError) as e:
            raise ConfigError(f"Error loading configuration {self.config_path}: {e}") from e

        if file_config:
            if not isinstance(file_config, dict):
                raise ConfigError(f"Configuration file {self.config_path} must hold a mapping")
            self._deep_update(self._config_data, file_config)
            logger.info(f"Loaded configuration from {self.config_path}")

    def _apply_profile(self) -> None:
        """Apply profile-specific settings from built-ins and profile files."""
        profile = self._config_data.get("profile", "default")
        profile_file = self.profiles_dir / f"{profile}.yaml"

        if profile in CONFIG_PROFILES:
            self._deep_update(self._config_data, copy.deepcopy(CONFIG_PROFILES[profile]))
        if profile_file.exists():
            with open(profile_file, 'r', encoding='utf-8') as f:
                profile_config = yaml.safe_load(f) or {}
            self._deep_update(self._config_data, profile_config)
        elif profile not in CONFIG_PROFILES:
            raise ConfigError(f"Unknown profile '{profile}'")

        if profile != "default":
            logger.info(f"Applying configuration profile: {profile}")

    def _load_from_env(self) -> None:
        """Load configuration from environment variables."""
        for env_var, config_path in ENV_VAR_MAPPINGS.items():
            if env_var in os.environ:
                self._set_path(config_path, self._convert_env_value(os.environ[env_var]))
                logger.debug(f"Applied environment variable {env_var} to {config_path}")

    def _set_path(self, dotted: str, value: Any) -> None:
        parts = dotted.split(".")
        current = self._config_data
        for part in parts[:-1]:
            current = current.setdefault(part, {})
        current[parts[-1]] = value

    def _convert_env_value(self, value: str) -> Any:
        """Convert string environment variable value to appropriate type."""
        if value.lower() in ("true", "yes"):
            return True
        if value.lower() in ("false", "no"):
            return False
        try:
            return json.loads(value)
        except json.JSONDecodeError:
            return value

    def _validate_config(self) -> None:
        """Validate configuration schema."""
        try:
            self._config = DedupConfig(**self._config_data)
        except ValidationError as e:
            raise ConfigError(f"Configuration validation error: {e}") from e

    def _deep_update(self, target: Dict, source: Dict) -> None:
        """Recursively update a nested dictionary."""
        for key, value in source.items():
            if key in target and isinstance(target[key], dict) and isinstance(value, dict):
                self._deep_update(target[key], value)
            else:
                target[key] = value

    def save(self, path: Path) -> None:
        """Write the effective configuration as YAML, without credentials."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            snapshot = self._config.model_dump(exclude={"remote": {"api_key"}})
            yaml.safe_dump(snapshot, f, default_flow_style=False, sort_keys=True)
        logger.info(f"Configuration snapshot written to {path}")


def load_snapshot(path: Path, overrides: Optional[Dict[str, Any]] = None) -> DedupConfig:
    """
    Load a configuration snapshot persisted next to trained artifacts.

    Args:
        path: Snapshot file written by :meth:`ConfigManager.save`
        overrides: Dotted-key overrides (inference-time toggles)

    Returns:
        Validated configuration
    """
    manager = ConfigManager(config_path=path, overrides=overrides, apply_profile=False)
    return manager.config
