"""Test that all rarescale modules import correctly."""
import importlib

import pytest


@pytest.mark.parametrize("module", [
    "rarescale",
    "rarescale.cli",
    "rarescale.pipeline",
    "rarescale.providers",
    "rarescale.providers.openai_chat",
    "rarescale.providers.anthropic_messages",
])
def test_module_imports(module):
    assert importlib.import_module(module) is not None


def test_package_exports():
    """Test the top-level package re-exports."""
    import rarescale

    for name in rarescale.__all__:
        assert hasattr(rarescale, name), name
    assert rarescale.__version__


def test_provider_imports():
    from rarescale.providers import OfflineResponder, ScriptedMock

    assert callable(OfflineResponder)
    assert callable(ScriptedMock)


def test_config_imports():
    from rarescale.config import settings

    assert settings is not None
