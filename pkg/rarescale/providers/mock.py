"""
Scripted Mock Backend

Script file format (JSON)::

    {
      "responses": [
        {"match": "*", "reply": "ok"},
        {"match": "TRUE DIAGNOSIS: Brucellosis", "tag": "judge_binary", "reply": "yes", "repeat": true},
        {"ordinal": 3, "reply": "BEGIN DDX\\n1. Brucellosis\\nEND DDX"}
      ],
      "fallback": "offline"
    }

On each call the first unconsumed entry whose matchers all fit is used:
``match`` is ``"*"`` or a substring of the request text, ``tag`` must equal
the request's template name, ``ordinal`` must equal the 1-based call number.
Entries are consumed once unless ``repeat`` is true. With ``"fallback":
"offline"`` unmatched calls go to the offline responder; otherwise they raise
``MockScriptExhaustedError``.
"""

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

from ..errors import ConfigError, MockScriptExhaustedError
from .types import ChatTurnRequest, ChatTurnResponse

Responder = Callable[[ChatTurnRequest], str]


@dataclass(frozen=True)
class ScriptEntry:
    reply: str
    match: Optional[str] = "*"
    tag: Optional[str] = None
    ordinal: Optional[int] = None
    repeat: bool = False

    def fits(self, req: ChatTurnRequest, ordinal: int) -> bool:
        if self.ordinal is not None and self.ordinal != ordinal:
            return False
        if self.tag is not None and self.tag != req.tag:
            return False
        if self.match not in (None, "*") and self.match not in req.text():
            return False
        return True


_ENTRY_KEYS = {"reply", "match", "tag", "ordinal", "repeat"}


def parse_script(data: dict) -> tuple[list[ScriptEntry], Optional[str]]:
    if not isinstance(data, dict) or not isinstance(data.get("responses", []), list):
        raise ConfigError("mock script must be an object with a 'responses' list")
    entries = []
    for i, raw in enumerate(data.get("responses", [])):
        if not isinstance(raw, dict) or "reply" not in raw:
            raise ConfigError(f"mock script entry {i} needs a 'reply'")
        unknown = set(raw) - _ENTRY_KEYS
        if unknown:
            raise ConfigError(f"mock script entry {i} has unknown keys: {sorted(unknown)}")
        entries.append(ScriptEntry(
            reply=str(raw["reply"]),
            match=raw.get("match", "*"),
            tag=raw.get("tag"),
            ordinal=raw.get("ordinal"),
            repeat=bool(raw.get("repeat", False)),
        ))
    fallback = data.get("fallback")
    if fallback not in (None, "offline"):
        raise ConfigError(f"unknown mock fallback: {fallback}")
    return entries, fallback


class ScriptedMock:
    def __init__(self, entries: list[ScriptEntry], responder: Optional[Responder] = None, model: str = "mock"):
        self._entries = list(entries)
        self._used = [False] * len(self._entries)
        self._responder = responder
        self._lock = threading.Lock()
        self._calls = 0
        self.model = model
        self.requests: list[ChatTurnRequest] = []

    @classmethod
    def from_file(cls, path: Union[str, Path], model: str = "mock") -> "ScriptedMock":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load mock script {path}: {e}") from None
        entries, fallback = parse_script(data)
        responder = None
        if fallback == "offline":
            from .offline import OfflineResponder
            responder = OfflineResponder()
        return cls(entries, responder, model)

    @classmethod
    def offline(cls, model: str = "mock") -> "ScriptedMock":
        from .offline import OfflineResponder
        return cls([], OfflineResponder(), model)

    @property
    def calls(self) -> int:
        return self._calls

    def complete(self, req: ChatTurnRequest) -> ChatTurnResponse:
        with self._lock:
            self._calls += 1
            ordinal = self._calls
            self.requests.append(req)
            for i, entry in enumerate(self._entries):
                if self._used[i] or not entry.fits(req, ordinal):
                    continue
                if not entry.repeat:
                    self._used[i] = True
                return ChatTurnResponse(text=entry.reply, model=self.model)
        if self._responder is not None:
            return ChatTurnResponse(text=self._responder(req), model=self.model)
        raise MockScriptExhaustedError(
            f"no scripted response fits call {ordinal} (tag={req.tag or '-'})"
        )
