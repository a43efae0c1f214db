"""
Call Ledger and Secret Redaction

Records every LLM round-trip in CALLS.md inside the run's output directory:
newest entries first, capped at MAX_LEDGER_ENTRIES. The ledger is off until
``configure_ledger(out_dir)`` is called, so library and test use never write
files.

Credential values are registered with ``register_secret``; ``redact`` scrubs
them from any text and ``RedactingFilter`` does the same for log records.
"""

import logging
import re
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

# Global lock for file operations (thread-safe within process)
_file_lock = threading.Lock()
_secret_lock = threading.Lock()
_secrets: set[str] = set()

MAX_LEDGER_ENTRIES = 500
LEDGER_NAME = "CALLS.md"
REDACTED = "[REDACTED]"

LEDGER_HEADER_TEMPLATE = """# LLM Call Ledger

> Auto-generated by rarescale. Do not edit manually.

**Last Updated:** {timestamp} UTC

---

## Calls

> Newest entries first. Limited to last {limit} entries.

"""

ENTRY_MARKER = "### 📞"


# =============================================================================
# REDACTION
# =============================================================================

def register_secret(value: Optional[str]) -> None:
    """Remember a credential value so it is scrubbed from logs and ledgers."""
    if value and len(value) >= 4:
        with _secret_lock:
            _secrets.add(value)


def clear_secrets() -> None:
    with _secret_lock:
        _secrets.clear()


def redact(text: str) -> str:
    if not text:
        return text
    with _secret_lock:
        secrets = sorted(_secrets, key=len, reverse=True)
    for secret in secrets:
        text = text.replace(secret, REDACTED)
    return text


class RedactingFilter(logging.Filter):
    """Scrub registered secrets from the rendered message of every record."""

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        cleaned = redact(message)
        if cleaned != message:
            record.msg = cleaned
            record.args = None
        return True


def setup_logging(level: Union[str, int] = "WARNING") -> None:
    """Configure the root handler used by the CLI."""
    root = logging.getLogger()
    root.setLevel(level.upper() if isinstance(level, str) else level)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    handler.addFilter(RedactingFilter())
    for existing in list(root.handlers):
        if getattr(existing, "_rarescale", False):
            root.removeHandler(existing)
    handler._rarescale = True
    root.addHandler(handler)


# =============================================================================
# LEDGER
# =============================================================================

def generate_call_id() -> str:
    """Generate a short unique ID for a call."""
    return uuid.uuid4().hex[:8]


def now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def now_time() -> str:
    return datetime.now(timezone.utc).strftime("%H:%M:%S")


def excerpt(text: str, max_len: int = 80) -> str:
    """First line, whitespace-collapsed and truncated."""
    if not text:
        return ""
    clean = " ".join(text.split())
    if len(clean) > max_len:
        return clean[: max_len - 3] + "..."
    return clean


@dataclass
class CallRecord:
    call_id: str
    tag: str
    model: str
    dialect: str
    started_at: str


class CallLedger:
    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / LEDGER_NAME
        self.active: dict[str, CallRecord] = {}

    def _header(self) -> str:
        return LEDGER_HEADER_TEMPLATE.format(timestamp=now_iso(), limit=MAX_LEDGER_ENTRIES)

    def _read_entries(self) -> list[str]:
        if not self.path.exists():
            return []
        content = self.path.read_text(encoding="utf-8")
        parts = content.split(ENTRY_MARKER)[1:]
        return [(ENTRY_MARKER + p).strip() for p in parts]

    def _write(self, entries: list[str]):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        body = "".join(entry + "\n\n" for entry in entries[:MAX_LEDGER_ENTRIES])
        self.path.write_text(self._header() + body, encoding="utf-8")

    def log_call_start(self, tag: str, model: str, dialect: str, prompt: str) -> str:
        call_id = generate_call_id()
        self.active[call_id] = CallRecord(call_id, tag, model, dialect, now_iso())
        entry = (
            f"{ENTRY_MARKER} {tag}\n"
            f"- [ ] ⏳ **Running** | `#{call_id}` | {model} [{dialect}] | {now_time()}\n"
            f"- Prompt: {redact(excerpt(prompt))}\n"
            f"\n---"
        )
        with _file_lock:
            entries = self._read_entries()
            entries.insert(0, entry)
            self._write(entries)
        return call_id

    def log_call_complete(
        self,
        call_id: str,
        success: bool,
        duration_seconds: float,
        retry_count: int = 0,
        error: Optional[str] = None,
    ):
        if success:
            status = f"- [x] ✅ **Done** ({duration_seconds:.2f}s, retries={retry_count})"
        else:
            status = f"- [x] ❌ **Failed**: {redact(excerpt(error or 'Unknown', 160))} ({duration_seconds:.2f}s, retries={retry_count})"
        pattern = re.compile(rf"- \[ \] ⏳ \*\*Running\*\* \| `#{call_id}` \| ([^\n]+)")
        with _file_lock:
            entries = self._read_entries()
            entries = [pattern.sub(lambda m: f"{status} | `#{call_id}` | {m.group(1)}", e) for e in entries]
            self._write(entries)
        self.active.pop(call_id, None)


_ledger: Optional[CallLedger] = None


def configure_ledger(out_dir: Optional[Union[str, Path]]) -> Optional[CallLedger]:
    """Enable the ledger in ``out_dir`` (or disable it with None)."""
    global _ledger
    _ledger = CallLedger(out_dir) if out_dir else None
    return _ledger


def get_ledger() -> Optional[CallLedger]:
    return _ledger


def log_call_start(tag: str, model: str, dialect: str, prompt: str) -> Optional[str]:
    ledger = _ledger
    return ledger.log_call_start(tag, model, dialect, prompt) if ledger else None


def log_call_complete(
    call_id: Optional[str],
    success: bool,
    duration_seconds: float,
    retry_count: int = 0,
    error: Optional[str] = None,
):
    ledger = _ledger
    if ledger and call_id:
        ledger.log_call_complete(call_id, success, duration_seconds, retry_count, error)
