"""
Providers Package

Wire dialects for remote chat models plus the local mock backends.
"""
from .types import ChatTurnRequest, ChatTurnResponse, PromptMessage, Role
from .mock import ScriptedMock
from .offline import OfflineResponder

__all__ = [
    "ChatTurnRequest",
    "ChatTurnResponse",
    "PromptMessage",
    "Role",
    "ScriptedMock",
    "OfflineResponder",
]
