"""
Prompt Templates

Templates are plain text files with ``{name}`` placeholders (``{{``/``}}`` for
literal braces). Rendering is exact: every placeholder must be supplied,
extra variables are ignored, and any attribute, index, conversion or format
spec in a placeholder is rejected.

Template lookup order:
    1. an explicit template directory (pipeline config ``template_dir``)
    2. ``RARESCALE_PROMPTS_DIR``
    3. the packaged ``prompts/`` directory
"""

import os
import string
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Union

from .errors import MissingVariableError, TemplateError, UnknownPlaceholderError

PROMPTS_ENV = "RARESCALE_PROMPTS_DIR"

TEMPLATE_NAMES = (
    "chat_single",
    "chat_turn",
    "checker",
    "profile",
    "ddx",
    "ddx_candidates",
    "rare_candidates",
    "judge_binary",
    "judge_similarity",
    "negative_screen",
)

_FORMATTER = string.Formatter()


def packaged_prompts_dir() -> Path:
    return Path(__file__).resolve().parent / "prompts"


def _parse(body: str) -> list[tuple[str, Optional[str]]]:
    """Split a body into (literal, placeholder-or-None) pieces."""
    try:
        parsed = list(_FORMATTER.parse(body))
    except ValueError as e:
        raise TemplateError(f"malformed template: {e}") from None
    pieces = []
    for literal, name, spec, conversion in parsed:
        if name is not None:
            if not name or not name.isidentifier() or spec or conversion:
                raw = name + (f"!{conversion}" if conversion else "") + (f":{spec}" if spec else "")
                raise UnknownPlaceholderError(raw or "{}")
        pieces.append((literal, name))
    return pieces


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    required_vars: frozenset[str]

    @classmethod
    def from_text(cls, name: str, body: str) -> "PromptTemplate":
        names = frozenset(n for _, n in _parse(body) if n is not None)
        return cls(name=name, body=body, required_vars=names)

    def __post_init__(self):
        placeholders = {n for _, n in _parse(self.body) if n is not None}
        unknown = placeholders - set(self.required_vars)
        if unknown:
            raise UnknownPlaceholderError(sorted(unknown)[0])


def render(template: PromptTemplate, variables: Mapping[str, object]) -> str:
    for name in sorted(template.required_vars):
        if name not in variables:
            raise MissingVariableError(name)
    out = []
    for literal, name in _parse(template.body):
        out.append(literal)
        if name is not None:
            out.append(str(variables[name]))
    return "".join(out)


def _search_dirs(template_dir: Optional[Union[str, Path]]) -> list[Path]:
    dirs = []
    if template_dir:
        dirs.append(Path(template_dir))
    env_dir = os.environ.get(PROMPTS_ENV)
    if env_dir:
        dirs.append(Path(env_dir))
    dirs.append(packaged_prompts_dir())
    return dirs


def find_template(name: str, template_dir: Optional[Union[str, Path]] = None) -> Path:
    for directory in _search_dirs(template_dir):
        path = directory / f"{name}.txt"
        if path.is_file():
            return path
    raise TemplateError(f"template not found: {name}")


@lru_cache(maxsize=64)
def _load_cached(path: str, mtime_ns: int) -> str:
    return Path(path).read_text(encoding="utf-8")


def load_template(name: str, template_dir: Optional[Union[str, Path]] = None) -> PromptTemplate:
    path = find_template(name, template_dir)
    body = _load_cached(str(path), path.stat().st_mtime_ns)
    return PromptTemplate.from_text(name, body)


def render_named(name: str, variables: Mapping[str, object], template_dir: Optional[Union[str, Path]] = None) -> str:
    return render(load_template(name, template_dir), variables)
