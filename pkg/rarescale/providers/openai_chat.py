"""
Messages-style Chat Dialect (OpenAI-compatible)

Any endpoint speaking the chat-completions protocol: OpenAI itself, or a
served open model behind an OpenAI-compatible server. SDK-level retries are
disabled; the gateway owns retry and backoff.
"""

import threading
from typing import Optional

from ..errors import LlmTransportError, MalformedResponseError, TransientLlmError
from .types import ChatTurnRequest, ChatTurnResponse

_clients: dict = {}
_clients_lock = threading.Lock()


def _get_client(endpoint: Optional[str], api_key: str, timeout: float):
    key = (endpoint, api_key, timeout)
    with _clients_lock:
        client = _clients.get(key)
        if client is None:
            from openai import OpenAI
            client = OpenAI(base_url=endpoint, api_key=api_key, timeout=timeout, max_retries=0)
            _clients[key] = client
        return client


def build_messages(req: ChatTurnRequest) -> list[dict]:
    return [{"role": m.role.value, "content": m.text} for m in req.messages]


def send(
    req: ChatTurnRequest,
    *,
    model: str,
    api_key: str,
    endpoint: Optional[str],
    temperature: float,
    max_tokens: int,
    timeout: float,
) -> ChatTurnResponse:
    import openai

    client = _get_client(endpoint, api_key, timeout)
    try:
        response = client.chat.completions.create(
            model=model,
            messages=build_messages(req),
            temperature=temperature,
            max_tokens=max_tokens,
        )
    except openai.RateLimitError as e:
        raise TransientLlmError(f"rate limited by provider: {e.message}", status=429) from None
    except openai.InternalServerError as e:
        raise TransientLlmError(f"provider error {e.status_code}", status=e.status_code) from None
    except (openai.APITimeoutError, openai.APIConnectionError) as e:
        raise TransientLlmError(f"connection failure: {type(e).__name__}") from None
    except openai.APIStatusError as e:
        raise LlmTransportError(f"provider rejected request with status {e.status_code}") from None

    if not getattr(response, "choices", None):
        raise MalformedResponseError("response has no choices")
    content = response.choices[0].message.content
    if not isinstance(content, str):
        raise MalformedResponseError("response message has no text content")

    usage = {}
    if response.usage:
        usage = {
            "prompt_tokens": response.usage.prompt_tokens,
            "completion_tokens": response.usage.completion_tokens,
            "total_tokens": response.usage.total_tokens,
        }
    return ChatTurnResponse(text=content, model=response.model or model, usage=usage)
