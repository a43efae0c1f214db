"""Test model aliases and credential lookup."""
import pytest

from rarescale.config import Settings
from rarescale.errors import ConfigError
from rarescale.logger import REDACTED, redact


def test_model_alias_resolution(monkeypatch):
    """Test model alias resolution against a stubbed registry."""
    models = {
        "test-dialect": {
            "default": "model-v1",
            "aliases": {"latest": "model-v2-beta", "stable": "model-v1"},
        }
    }
    monkeypatch.setattr(Settings, "_load_models", lambda self: setattr(self, "_models", models))

    settings = Settings()
    assert settings.get_model_alias("test-dialect", "latest") == "model-v2-beta"
    assert settings.get_model_alias("TEST-DIALECT", None) == "model-v1"
    assert settings.get_model_alias("test-dialect", "unknown") == "unknown"
    assert settings.get_model_alias("other", "anything") == "anything"
    assert settings.get_model_list("test-dialect") == ["latest", "stable"]


def test_packaged_models_cover_each_dialect():
    """models.json must give every dialect a default."""
    settings = Settings()
    assert settings.get_model_alias("messages", None) == "gpt-4o"
    assert settings.get_model_alias("messages", "4o-mini") == "gpt-4o-mini"
    assert settings.get_model_alias("content-blocks", None) == "claude-3-5-sonnet-20241022"
    assert settings.get_model_alias("content-blocks", "haiku") == "claude-3-5-haiku-20241022"
    assert settings.get_model_alias("mock", None) == "mock"
    assert "sonnet" in settings.get_model_list("content-blocks")


def test_get_api_key_registers_secret(monkeypatch):
    monkeypatch.setenv("RARESCALE_TEST_KEY", "sk-test-123456")
    settings = Settings()
    assert settings.get_api_key("RARESCALE_TEST_KEY") == "sk-test-123456"
    assert redact("auth sk-test-123456 ok") == f"auth {REDACTED} ok"


def test_missing_credentials(monkeypatch):
    monkeypatch.delenv("RARESCALE_TEST_KEY", raising=False)
    settings = Settings()
    assert settings.get_api_key(None) is None
    assert settings.get_api_key("RARESCALE_TEST_KEY") is None
    with pytest.raises(ConfigError, match="RARESCALE_TEST_KEY"):
        settings.require_api_key("RARESCALE_TEST_KEY")


def test_empty_credential_counts_as_missing(monkeypatch):
    monkeypatch.setenv("RARESCALE_TEST_KEY", "")
    with pytest.raises(ConfigError):
        Settings().require_api_key("RARESCALE_TEST_KEY")
