"""
Content-blocks Chat Dialect

Plain HTTP against a ``/v1/messages`` endpoint: the system prompt travels
separately and every message body is a list of typed content blocks.
"""

from typing import Any, Optional

import requests

from ..errors import LlmTransportError, MalformedResponseError, TransientLlmError
from .types import ChatTurnRequest, ChatTurnResponse, Role

DEFAULT_ENDPOINT = "https://api.anthropic.com"
API_VERSION = "2023-06-01"
TRANSIENT_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504, 529})


def build_payload(req: ChatTurnRequest, *, model: str, temperature: float, max_tokens: int) -> dict:
    payload: dict = {
        "model": model,
        "max_tokens": max_tokens,
        "temperature": temperature,
        "messages": [
            {"role": m.role.value, "content": [{"type": "text", "text": m.text}]}
            for m in req.messages
            if m.role is not Role.SYSTEM
        ],
    }
    system = req.system_text()
    if system:
        payload["system"] = system
    return payload


def extract_text(body: Any) -> str:
    """Concatenate the text blocks of a content-blocks response."""
    if not isinstance(body, dict):
        raise MalformedResponseError("response body is not an object")
    content = body.get("content")
    if isinstance(content, str):
        return content
    if not isinstance(content, list):
        raise MalformedResponseError("response has no content blocks")
    parts = [
        block.get("text", "")
        for block in content
        if isinstance(block, dict) and block.get("type") == "text"
    ]
    if not parts:
        raise MalformedResponseError("response has no text blocks")
    return "".join(parts)


def send(
    req: ChatTurnRequest,
    *,
    model: str,
    api_key: str,
    endpoint: Optional[str],
    temperature: float,
    max_tokens: int,
    timeout: float,
    session: Optional[requests.Session] = None,
) -> ChatTurnResponse:
    url = (endpoint or DEFAULT_ENDPOINT).rstrip("/") + "/v1/messages"
    headers = {
        "x-api-key": api_key,
        "anthropic-version": API_VERSION,
        "content-type": "application/json",
    }
    payload = build_payload(req, model=model, temperature=temperature, max_tokens=max_tokens)
    http = session or requests
    try:
        resp = http.post(url, json=payload, headers=headers, timeout=timeout)
    except (requests.ConnectionError, requests.Timeout) as e:
        raise TransientLlmError(f"connection failure: {type(e).__name__}") from None
    except requests.RequestException as e:
        raise LlmTransportError(f"request failed: {type(e).__name__}") from None

    if resp.status_code in TRANSIENT_STATUS:
        raise TransientLlmError(f"provider returned status {resp.status_code}", status=resp.status_code)
    if resp.status_code >= 400:
        raise LlmTransportError(f"provider rejected request with status {resp.status_code}")

    try:
        body = resp.json()
    except ValueError:
        raise MalformedResponseError("response body is not JSON") from None
    text = extract_text(body)
    usage = body.get("usage") or {}
    return ChatTurnResponse(
        text=text,
        model=body.get("model") or model,
        usage={k: v for k, v in usage.items() if isinstance(v, int)},
    )
