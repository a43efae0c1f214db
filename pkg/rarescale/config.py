"""
Configuration Settings Provider

Model alias registry (models.json, one block per wire dialect) and credential
lookup. Credentials come only from environment variables whose NAME is set
in the LLM config; they are registered for redaction the moment they are read.
"""

import json
import logging
import os
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .logger import register_secret

logger = logging.getLogger(__name__)


class Settings:
    def __init__(self):
        self._models = {}
        self._load_models()

    def _load_models(self):
        """Load model configurations from models.json."""
        model_file = Path(__file__).parent / "models.json"
        if model_file.exists():
            try:
                with open(model_file, "r", encoding="utf-8") as f:
                    self._models = json.load(f)
            except Exception as e:
                logger.warning("Failed to load models.json: %s", e)
        else:
            logger.warning("models.json not found. Using empty model registry.")

    def get_api_key(self, env_var: Optional[str]) -> Optional[str]:
        """Read a credential from the named environment variable."""
        if not env_var:
            return None
        value = os.getenv(env_var)
        if value:
            register_secret(value)
        return value or None

    def require_api_key(self, env_var: Optional[str]) -> str:
        value = self.get_api_key(env_var)
        if not value:
            raise ConfigError(f"credential environment variable not set: {env_var}")
        return value

    def get_model_alias(self, dialect: str, model_name: Optional[str]) -> str:
        """
        Resolve a model alias to its full name for a dialect.
        If model_name is None, returns the dialect's default model.
        """
        dialect_config = self._models.get(dialect.lower(), {})

        if not model_name:
            return dialect_config.get("default", model_name)

        aliases = dialect_config.get("aliases", {})
        return aliases.get(model_name, model_name)

    def get_model_list(self, dialect: str) -> list[str]:
        """Get list of available aliases for a dialect."""
        dialect_config = self._models.get(dialect.lower(), {})
        return list(dialect_config.get("aliases", {}).keys())


# Singleton instance
settings = Settings()
