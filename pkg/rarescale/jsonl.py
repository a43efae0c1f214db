"""JSON-lines helpers shared by the stage outputs."""

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, Union

from .errors import DatasetError


def dumps_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: Union[str, Path], records: Iterable[dict]) -> int:
    """Atomically write records, one sorted-key JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    count = 0
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            for record in records:
                f.write(dumps_line(record) + "\n")
                count += 1
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return count


def iter_jsonl(path: Union[str, Path]) -> Iterator[dict]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise DatasetError(f"{path.name}:{lineno}: malformed JSON ({e.msg})") from None
    except FileNotFoundError:
        raise DatasetError(f"no such file: {path}") from None


def read_jsonl(path: Union[str, Path]) -> list[dict]:
    return list(iter_jsonl(path))
