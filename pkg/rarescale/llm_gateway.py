"""
LLM Gateway

One ``complete`` call over three backends:

- ``remote`` + ``messages`` dialect: OpenAI-compatible chat completions
- ``remote`` + ``content-blocks`` dialect: /v1/messages over plain HTTP
- ``mock``: a scripted mock (see providers/mock.py), or the offline
  responder when no script is given

Remote clients honour a per-config requests-per-minute cap (sliding 60 s
window), a bounded number of in-flight requests, and retry transient
failures (429, 5xx, connection errors) with exponential backoff. Clients are
shared per ``LlmConfig`` so every caller with the same config shares one
limiter. The mock backend is local and is not rate-limited.
"""

import logging
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Mapping, Optional

from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from .config import settings
from .errors import (
    ConfigError,
    LlmRateLimitedError,
    LlmTransportError,
    RareScaleError,
    TransientLlmError,
)
from .logger import log_call_complete, log_call_start, redact
from .providers import anthropic_messages, openai_chat
from .providers.mock import ScriptedMock
from .providers.types import ChatTurnRequest, ChatTurnResponse
from .templates import load_template, render

logger = logging.getLogger(__name__)

BACKENDS = ("remote", "mock")
DIALECTS = ("messages", "content-blocks")
WINDOW_SECONDS = 60.0


@dataclass(frozen=True)
class LlmConfig:
    backend: str = "mock"
    dialect: str = "messages"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None   # name of the env var, never the secret
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    requests_per_minute: int = 60
    max_in_flight: int = 4
    max_tokens: int = 2048
    backoff_base: float = 1.0
    backoff_max: float = 30.0
    mock_script: Optional[str] = None
    template_dir: Optional[str] = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend: {self.backend}")
        if self.dialect not in DIALECTS:
            raise ConfigError(f"unknown dialect: {self.dialect}")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.requests_per_minute <= 0:
            raise ConfigError("requests_per_minute must be > 0")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.backoff_base < 0 or self.backoff_max < 0:
            raise ConfigError("backoff must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping) -> "LlmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown LLM config keys: {sorted(unknown)}")
        return cls(**data)

    def merged(self, overrides: Mapping) -> "LlmConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown LLM config keys: {sorted(unknown)}")
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def label(self) -> str:
        return "mock" if self.backend == "mock" else self.dialect


class RateLimiter:
    """At most ``per_minute`` grants in any 60 second window."""

    def __init__(
        self,
        per_minute: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._window: deque[float] = deque()
        self.grants: list[float] = []

    def acquire(self) -> float:
        """Block until a slot is free; returns the grant time."""
        while True:
            with self._lock:
                now = self._clock()
                while self._window and self._window[0] <= now - WINDOW_SECONDS:
                    self._window.popleft()
                if len(self._window) < self.per_minute:
                    self._window.append(now)
                    self.grants.append(now)
                    return now
                wait = self._window[0] + WINDOW_SECONDS - now
            self._sleep(max(wait, 0.0))


class LlmClient:
    def __init__(
        self,
        config: LlmConfig,
        *,
        mock: Optional[ScriptedMock] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._sleep = sleep
        self._mock: Optional[ScriptedMock] = None
        self._limiter: Optional[RateLimiter] = None
        self._slots: Optional[threading.BoundedSemaphore] = None
        if config.backend == "mock":
            if mock is not None:
                self._mock = mock
            elif config.mock_script:
                self._mock = ScriptedMock.from_file(config.mock_script, model=config.model or "mock")
            else:
                self._mock = ScriptedMock.offline(model=config.model or "mock")
            self.model = self._mock.model
        else:
            # registers the credential for redaction before any prompt is logged
            settings.get_api_key(config.api_key_env)
            self._limiter = RateLimiter(config.requests_per_minute, clock, sleep)
            self._slots = threading.BoundedSemaphore(config.max_in_flight)
            self.model = settings.get_model_alias(config.dialect, config.model)
            if not self.model:
                raise ConfigError(f"no model configured for dialect {config.dialect}")

    @property
    def limiter(self) -> Optional[RateLimiter]:
        return self._limiter

    @property
    def mock(self) -> Optional[ScriptedMock]:
        return self._mock

    @property
    def template_dir(self) -> Optional[str]:
        return self.config.template_dir

    def complete(self, req: ChatTurnRequest) -> ChatTurnResponse:
        start = time.monotonic()
        call_id = log_call_start(req.tag or "-", self.model, self.config.label, req.text())
        retries = 0
        try:
            if self._mock is not None:
                response = self._mock.complete(req)
            else:
                response, retries = self._complete_remote(req)
        except RareScaleError as e:
            log_call_complete(call_id, False, time.monotonic() - start, retries, str(e))
            raise
        duration = time.monotonic() - start
        response.retry_count = retries
        response.duration_ms = int(duration * 1000)
        response.call_id = call_id
        log_call_complete(call_id, True, duration, retries)
        return response

    def ask(self, template: str, variables: Mapping[str, object], *, system: Optional[str] = None) -> ChatTurnResponse:
        """Render a named template and send it as one user message."""
        prompt = render(load_template(template, self.config.template_dir), variables)
        return self.complete(ChatTurnRequest.user(prompt, tag=template, system=system))

    def _api_key(self) -> str:
        if not self.config.api_key_env:
            # Local OpenAI-compatible servers accept any key.
            return "unused"
        return settings.require_api_key(self.config.api_key_env)

    def _send_once(self, req: ChatTurnRequest) -> ChatTurnResponse:
        cfg = self.config
        api_key = self._api_key()
        self._limiter.acquire()
        with self._slots:
            backend = openai_chat if cfg.dialect == "messages" else anthropic_messages
            return backend.send(
                req,
                model=self.model,
                api_key=api_key,
                endpoint=cfg.endpoint,
                temperature=cfg.temperature,
                max_tokens=cfg.max_tokens,
                timeout=cfg.timeout,
            )

    def _complete_remote(self, req: ChatTurnRequest) -> tuple[ChatTurnResponse, int]:
        cfg = self.config
        attempts = 0
        retrying = Retrying(
            stop=stop_after_attempt(cfg.max_retries + 1),
            wait=wait_exponential(multiplier=cfg.backoff_base, max=cfg.backoff_max),
            retry=retry_if_exception_type(TransientLlmError),
            sleep=self._sleep,
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    attempts = attempt.retry_state.attempt_number
                    if attempts > 1:
                        logger.info("retrying %s call (attempt %d)", req.tag or "llm", attempts)
                    response = self._send_once(req)
        except TransientLlmError as e:
            message = redact(f"giving up after {attempts} attempts: {e}")
            if e.status == 429:
                raise LlmRateLimitedError(message) from None
            raise LlmTransportError(message) from None
        return response, attempts - 1


_clients: dict[LlmConfig, LlmClient] = {}
_clients_lock = threading.Lock()


def get_client(config: LlmConfig) -> LlmClient:
    """Shared client (and rate limiter) per config."""
    with _clients_lock:
        client = _clients.get(config)
        if client is None:
            client = _clients[config] = LlmClient(config)
        return client


def reset_clients() -> None:
    with _clients_lock:
        _clients.clear()


def complete(config: LlmConfig, req: ChatTurnRequest) -> ChatTurnResponse:
    return get_client(config).complete(req)
