"""
Chat Types and Common Definitions
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..errors import LlmError


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class PromptMessage:
    role: Role
    text: str


@dataclass(frozen=True)
class ChatTurnRequest:
    """Ordered chat messages; ``tag`` names the template that produced them."""
    messages: tuple[PromptMessage, ...]
    tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise LlmError("chat request must contain at least one message")
        if self.messages[0].role is Role.ASSISTANT:
            raise LlmError("first message must be a system or user message")

    @classmethod
    def user(cls, text: str, tag: str = "", system: Optional[str] = None) -> "ChatTurnRequest":
        messages = []
        if system:
            messages.append(PromptMessage(Role.SYSTEM, system))
        messages.append(PromptMessage(Role.USER, text))
        return cls(tuple(messages), tag)

    def text(self) -> str:
        """All message texts joined, for matching and logging."""
        return "\n".join(m.text for m in self.messages)

    def system_text(self) -> Optional[str]:
        parts = [m.text for m in self.messages if m.role is Role.SYSTEM]
        return "\n".join(parts) if parts else None


@dataclass
class ChatTurnResponse:
    """Unified result from any backend."""
    text: str
    model: Optional[str] = None
    usage: dict = field(default_factory=dict)
    retry_count: int = 0
    duration_ms: int = 0
    call_id: Optional[str] = None
