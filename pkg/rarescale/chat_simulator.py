"""
Chat Simulator

Turns structured cases into history-taking chats and verifies them.

Wire format demanded from the model (any deviation is a parse error)::

    BEGIN CHAT
    PROVIDER: What brings you in today?
    PATIENT: I have been running a fever.
    FINDINGS: F001=present; F007=absent
    ...
    END CHAT

Turn-by-turn mode uses the same lines between ``BEGIN TURN`` / ``END TURN``
with exactly one provider and one patient message. Every PATIENT line is
followed by exactly one FINDINGS line (``FINDINGS: none`` allowed).

A chat's system message carries the patient profile, which covers the case's
demographic findings; patient annotations must cover the rest exactly,
polarity included, with at most three findings per patient message.
"""

import json
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    ProfileContradictionError,
    UnknownAnnotationError,
    UnparseableResponseError,
)
from .case_simulator import StructuredCase
from .knowledge_base import KnowledgeBase
from .pool import KeyedLocks
from .scorer import FindingEntry, Polarity

logger = logging.getLogger(__name__)

MAX_FINDINGS_PER_MESSAGE = 3
MAX_REPAIR_ATTEMPTS = 3
MAX_HINTS_PER_FINDING = 3
MODES = ("single", "turnwise")

_ANNOTATION = re.compile(r"^(?P<id>[^=\s;]+)\s*=\s*(?P<polarity>[a-z]+)$")


class Speaker(str, Enum):
    SYSTEM = "system"
    PROVIDER = "provider"
    PATIENT = "patient"


@dataclass(frozen=True)
class ChatMessage:
    role: Speaker
    text: str
    findings: tuple[FindingEntry, ...] = ()

    def to_dict(self) -> dict:
        out = {"role": self.role.value, "text": self.text}
        if self.role is Speaker.PATIENT:
            out["findings"] = [{"id": f.finding_id, "polarity": f.polarity.value} for f in self.findings]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ChatMessage":
        return cls(
            role=Speaker(data["role"]),
            text=data["text"],
            findings=tuple(FindingEntry(f["id"], Polarity(f["polarity"])) for f in data.get("findings", ())),
        )


@dataclass(frozen=True)
class ChatRecord:
    case_id: str
    disease_id: str
    mode: str
    model: str
    messages: tuple[ChatMessage, ...]
    repair_attempts: int = 0
    discarded: bool = False
    needs_repair: bool = False

    def annotations(self) -> set[tuple[str, Polarity]]:
        return {
            (f.finding_id, f.polarity)
            for m in self.messages if m.role is Speaker.PATIENT
            for f in m.findings
        }

    def patient_messages(self) -> list[ChatMessage]:
        return [m for m in self.messages if m.role is Speaker.PATIENT]

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "disease_id": self.disease_id,
            "mode": self.mode,
            "model": self.model,
            "messages": [m.to_dict() for m in self.messages],
            "repair_attempts": self.repair_attempts,
            "discarded": self.discarded,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChatRecord":
        return cls(
            case_id=data["case_id"],
            disease_id=data["disease_id"],
            mode=data["mode"],
            model=data["model"],
            messages=tuple(ChatMessage.from_dict(m) for m in data["messages"]),
            repair_attempts=int(data.get("repair_attempts", 0)),
            discarded=bool(data.get("discarded", False)),
        )


# =============================================================================
# PROFILE
# =============================================================================

PROFILE_SLOTS = ("name", "gender", "age", "race", "education", "location")
_SLOT_FOR_GROUP = {"sex": "gender", "gender": "gender", "race": "race", "education": "education", "location": "location"}


@dataclass(frozen=True)
class DemographicProfile:
    name: str
    gender: str
    age: int
    race: str
    education: str
    location: str

    def to_dict(self) -> dict:
        return {slot: getattr(self, slot) for slot in PROFILE_SLOTS}

    def describe(self) -> str:
        return "; ".join(f"{slot}: {getattr(self, slot)}" for slot in PROFILE_SLOTS)


def fixed_slots(case: StructuredCase) -> dict[str, object]:
    """Profile values pinned by the case's demographic findings."""
    fixed: dict[str, object] = {}
    for group, value in sorted(case.demographics.items()):
        if group == "age":
            m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", str(value))
            if m:
                fixed["age_min"], fixed["age_max"] = int(m[1]), int(m[2])
        elif group in _SLOT_FOR_GROUP:
            fixed[_SLOT_FOR_GROUP[group]] = str(value)
    return fixed


def profile_conflicts(profile: DemographicProfile, fixed: dict[str, object]) -> list[str]:
    problems = []
    for slot, value in fixed.items():
        if slot == "age_min" and profile.age < int(value):
            problems.append(f"age {profile.age} below {value}")
        elif slot == "age_max" and profile.age > int(value):
            problems.append(f"age {profile.age} above {value}")
        elif slot in PROFILE_SLOTS and str(getattr(profile, slot)).casefold() != str(value).casefold():
            problems.append(f"{slot} {getattr(profile, slot)!r} != {value!r}")
    return problems


def parse_profile(text: str) -> DemographicProfile:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise UnparseableResponseError("profile response has no JSON object")
    try:
        data = json.loads(text[start:end + 1])
    except json.JSONDecodeError as e:
        raise UnparseableResponseError(f"profile response is not valid JSON: {e.msg}") from None
    missing = [slot for slot in PROFILE_SLOTS if slot not in data or data[slot] in (None, "")]
    if missing:
        raise UnparseableResponseError(f"profile missing slots: {missing}")
    age = data["age"]
    if isinstance(age, str) and age.strip().isdigit():
        age = int(age)
    if isinstance(age, bool) or not isinstance(age, int):
        raise UnparseableResponseError(f"profile age is not a whole number: {data['age']!r}")
    return DemographicProfile(
        name=str(data["name"]),
        gender=str(data["gender"]),
        age=age,
        race=str(data["race"]),
        education=str(data["education"]),
        location=str(data["location"]),
    )


_LOCAL_NAMES = ("Alex Morgan", "Sam Rivera", "Jordan Lee", "Taylor Brooks", "Casey Nguyen")
_LOCAL_RACES = ("White", "Black", "Asian", "Hispanic", "Mixed")
_LOCAL_EDUCATION = ("High school", "Some college", "Bachelor's degree", "Master's degree")
_LOCAL_LOCATIONS = ("Ohio", "Texas", "Oregon", "Maine", "Georgia")


def sample_profile(case: StructuredCase, rng: np.random.Generator) -> DemographicProfile:
    """Local sampler: fixed slots copied from the case, the rest drawn from ``rng``."""
    fixed = fixed_slots(case)
    lo, hi = int(fixed.get("age_min", 18)), int(fixed.get("age_max", 85))
    return DemographicProfile(
        name=str(rng.choice(_LOCAL_NAMES)),
        gender=str(fixed.get("gender", rng.choice(("female", "male")))),
        age=int(rng.integers(lo, hi + 1)),
        race=str(fixed.get("race", rng.choice(_LOCAL_RACES))),
        education=str(fixed.get("education", rng.choice(_LOCAL_EDUCATION))),
        location=str(fixed.get("location", rng.choice(_LOCAL_LOCATIONS))),
    )


def build_profile(case: StructuredCase, llm=None, rng: Optional[np.random.Generator] = None) -> DemographicProfile:
    """Profile for a case: fixed slots must match, the model fills the rest.

    A contradicting profile is retried once, then rejected. Without an LLM the
    local sampler is used.
    """
    if llm is None:
        return sample_profile(case, rng if rng is not None else np.random.default_rng(0))
    fixed = fixed_slots(case)
    fixed_text = "\n".join(f"{k}={v}" for k, v in fixed.items()) or "(none)"
    problems: list[str] = []
    for attempt in range(2):
        response = llm.ask("profile", {"case_id": case.case_id, "fixed": fixed_text})
        profile = parse_profile(response.text)
        problems = profile_conflicts(profile, fixed)
        if not problems:
            return profile
        logger.info("profile for %s contradicts case (attempt %d): %s", case.case_id, attempt + 1, problems)
    raise ProfileContradictionError(f"profile for {case.case_id} contradicts case: {'; '.join(problems)}")


# =============================================================================
# PHRASE BANK
# =============================================================================

class PhraseBank:
    """Per-disease patient phrasings for each finding; append-only."""

    def __init__(self, data: Optional[dict] = None):
        self._data: dict[str, dict[str, list[str]]] = {
            d: {f: list(p) for f, p in fs.items()} for d, fs in (data or {}).items()
        }
        self._locks = KeyedLocks()

    def phrases(self, disease_id: str, finding_id: str) -> list[str]:
        with self._locks.hold(disease_id):
            return list(self._data.get(disease_id, {}).get(finding_id, ()))

    def add(self, disease_id: str, finding_id: str, phrase: str) -> bool:
        phrase = phrase.strip()
        if not phrase:
            return False
        with self._locks.hold(disease_id):
            bucket = self._data.setdefault(disease_id, {}).setdefault(finding_id, [])
            if phrase in bucket:
                return False
            bucket.append(phrase)
            return True

    def record_chat(self, chat: ChatRecord) -> int:
        added = 0
        for message in chat.patient_messages():
            for f in message.findings:
                added += self.add(chat.disease_id, f.finding_id, message.text)
        return added

    def to_dict(self) -> dict:
        out = {}
        for disease_id in sorted(self._data):
            with self._locks.hold(disease_id):
                out[disease_id] = {f: list(p) for f, p in sorted(self._data[disease_id].items())}
        return out

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PhraseBank":
        path = Path(path)
        if not path.exists():
            return cls()
        return cls(json.loads(path.read_text(encoding="utf-8")))


# =============================================================================
# PROMPT BLOCKS
# =============================================================================

def required_entries(kb: KnowledgeBase, case: StructuredCase) -> list[FindingEntry]:
    """Case findings a chat must express through patient messages."""
    return case.non_demographic(kb)


def finding_line(kb: KnowledgeBase, entry: FindingEntry, with_definition: bool = True) -> str:
    finding = kb.finding(entry.finding_id)
    line = f"- {finding.id} | {finding.name} | {entry.polarity.value}"
    if with_definition and finding.definition:
        line += f" | definition: {finding.definition}"
    return line


def finding_block(kb: KnowledgeBase, entries: Iterable[FindingEntry], with_definition: bool = True) -> str:
    lines = [finding_line(kb, e, with_definition) for e in entries]
    return "\n".join(lines) if lines else "(none)"


def phrase_hints(kb: KnowledgeBase, bank: PhraseBank, disease_id: str, entries: Iterable[FindingEntry]) -> str:
    lines = []
    for e in entries:
        phrases = bank.phrases(disease_id, e.finding_id)[-MAX_HINTS_PER_FINDING:]
        if phrases:
            quoted = " | ".join(json.dumps(p, ensure_ascii=False) for p in phrases)
            lines.append(f"- {e.finding_id} ({kb.finding(e.finding_id).name}): {quoted}")
    return "\n".join(lines) if lines else "(none)"


def system_message(profile: DemographicProfile) -> ChatMessage:
    return ChatMessage(Speaker.SYSTEM, f"Patient profile: {profile.describe()}")


def wire_transcript(messages: Iterable[ChatMessage]) -> str:
    """Provider/patient lines with FINDINGS annotations (checker input)."""
    lines = []
    for m in messages:
        if m.role is Speaker.PROVIDER:
            lines.append(f"PROVIDER: {m.text}")
        elif m.role is Speaker.PATIENT:
            lines.append(f"PATIENT: {m.text}")
            notes = "; ".join(f"{f.finding_id}={f.polarity.value}" for f in m.findings)
            lines.append(f"FINDINGS: {notes or 'none'}")
    return "\n".join(lines)


def plain_transcript(messages: Iterable[ChatMessage], include_system: bool = True) -> str:
    """Role-prefixed text without annotations; never leaks finding labels."""
    lines = []
    for m in messages:
        if m.role is Speaker.SYSTEM and not include_system:
            continue
        lines.append(f"{m.role.value.upper()}: {m.text}")
    return "\n".join(lines)


def render_chat(chat: ChatRecord, kb: KnowledgeBase) -> str:
    """Human-readable export with bracketed finding annotations."""
    lines = [f"# {chat.case_id} ({chat.mode}, {chat.model})"]
    for m in chat.messages:
        line = f"{m.role.value.upper()}: {m.text}"
        if m.findings:
            notes = "; ".join(
                f"{kb.findings[f.finding_id].name if f.finding_id in kb.findings else f.finding_id} ({f.polarity.value})"
                for f in m.findings
            )
            line += f" [{notes}]"
        lines.append(line)
    if chat.discarded:
        lines.append("(discarded)")
    return "\n".join(lines) + "\n"


# =============================================================================
# PARSING
# =============================================================================

def _parse_annotations(raw: str, allowed: set[str]) -> tuple[FindingEntry, ...]:
    raw = raw.strip()
    if raw.casefold() == "none":
        return ()
    entries: list[FindingEntry] = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        m = _ANNOTATION.match(part)
        if not m or m["polarity"] not in ("present", "absent"):
            raise UnparseableResponseError(f"malformed finding annotation: {part!r}")
        if m["id"] not in allowed:
            raise UnknownAnnotationError(f"annotation references a finding not in the case: {m['id']}")
        entry = FindingEntry(m["id"], Polarity(m["polarity"]))
        if entry not in entries:
            entries.append(entry)
    return tuple(entries)


def _between(text: str, begin: str, end: str) -> list[str]:
    lines = [line.strip() for line in text.strip().splitlines()]
    try:
        start = lines.index(begin)
    except ValueError:
        raise UnparseableResponseError(f"response has no {begin} line") from None
    try:
        stop = lines.index(end, start + 1)
    except ValueError:
        raise UnparseableResponseError(f"response has no {end} line") from None
    return [line for line in lines[start + 1:stop] if line]


def parse_messages(text: str, allowed: set[str], begin: str = "BEGIN CHAT", end: str = "END CHAT") -> list[ChatMessage]:
    """Parse the fenced, line-tagged chat format into provider/patient messages."""
    messages: list[ChatMessage] = []
    pending: Optional[str] = None
    for line in _between(text, begin, end):
        tag, sep, rest = line.partition(":")
        if not sep or tag not in ("PROVIDER", "PATIENT", "FINDINGS"):
            raise UnparseableResponseError(f"unexpected line in chat: {line[:60]!r}")
        rest = rest.strip()
        if tag == "FINDINGS":
            if pending is None:
                raise UnparseableResponseError("FINDINGS line without a preceding PATIENT line")
            messages.append(ChatMessage(Speaker.PATIENT, pending, _parse_annotations(rest, allowed)))
            pending = None
            continue
        if pending is not None:
            raise UnparseableResponseError("patient message without a FINDINGS annotation line")
        if not rest:
            raise UnparseableResponseError(f"empty {tag} message")
        expected = Speaker.PROVIDER if not messages or messages[-1].role is Speaker.PATIENT else Speaker.PATIENT
        if tag == "PROVIDER":
            if expected is not Speaker.PROVIDER:
                raise UnparseableResponseError("two provider messages in a row")
            messages.append(ChatMessage(Speaker.PROVIDER, rest))
        else:
            if expected is not Speaker.PATIENT:
                raise UnparseableResponseError("patient message before the provider opens")
            pending = rest
    if pending is not None:
        raise UnparseableResponseError("patient message without a FINDINGS annotation line")
    if not messages:
        raise UnparseableResponseError("chat has no messages")
    return messages


def parse_turn(text: str, allowed: set[str]) -> tuple[ChatMessage, ChatMessage]:
    messages = parse_messages(text, allowed, "BEGIN TURN", "END TURN")
    if len(messages) != 2:
        raise UnparseableResponseError(f"turn must hold one provider and one patient message, got {len(messages)}")
    return messages[0], messages[1]


# =============================================================================
# COVERAGE
# =============================================================================

@dataclass(frozen=True)
class Coverage:
    missing: tuple[FindingEntry, ...] = ()
    spurious: tuple[FindingEntry, ...] = ()
    overfull: tuple[int, ...] = ()   # message indexes with too many findings

    @property
    def complete(self) -> bool:
        return not (self.missing or self.spurious or self.overfull)


def check_coverage(kb: KnowledgeBase, chat: ChatRecord, case: StructuredCase) -> Coverage:
    required = required_entries(kb, case)
    allowed = {(e.finding_id, e.polarity) for e in case.findings}
    annotated = chat.annotations()
    missing = tuple(e for e in required if (e.finding_id, e.polarity) not in annotated)
    spurious = tuple(
        FindingEntry(fid, pol) for fid, pol in sorted(annotated, key=lambda a: (a[0], a[1].value))
        if (fid, pol) not in allowed
    )
    overfull = tuple(
        i for i, m in enumerate(chat.messages)
        if m.role is Speaker.PATIENT and len(m.findings) > MAX_FINDINGS_PER_MESSAGE
    )
    return Coverage(missing, spurious, overfull)


# =============================================================================
# GENERATION
# =============================================================================

def _allowed_ids(case: StructuredCase) -> set[str]:
    return set(case.findings.ids())


def generate_chat_single(
    kb: KnowledgeBase,
    case: StructuredCase,
    profile: DemographicProfile,
    llm,
    bank: PhraseBank,
) -> ChatRecord:
    disease = kb.disease(case.seed_disease)
    required = required_entries(kb, case)
    response = llm.ask("chat_single", {
        "disease_name": disease.name,
        "profile": profile.describe(),
        "findings": finding_block(kb, required),
        "phrase_hints": phrase_hints(kb, bank, disease.id, required),
    })
    messages = parse_messages(response.text, _allowed_ids(case))
    chat = ChatRecord(
        case_id=case.case_id,
        disease_id=disease.id,
        mode="single",
        model=response.model or llm.model,
        messages=(system_message(profile), *messages),
    )
    return replace(chat, needs_repair=not check_coverage(kb, chat, case).complete)


def generate_chat_turnwise(
    kb: KnowledgeBase,
    case: StructuredCase,
    profile: DemographicProfile,
    llm,
    bank: PhraseBank,
    turn_cap: Optional[int] = None,
) -> ChatRecord:
    disease = kb.disease(case.seed_disease)
    required = required_entries(kb, case)
    cap = turn_cap if turn_cap is not None else max(1, 2 * len(required))
    allowed = _allowed_ids(case)
    messages: list[ChatMessage] = [system_message(profile)]
    covered: set[tuple[str, Polarity]] = set()
    model = llm.model

    def remaining() -> list[FindingEntry]:
        return [e for e in required if (e.finding_id, e.polarity) not in covered]

    turns = 0
    while remaining() and turns < cap:
        needed = remaining()
        done = [e for e in required if (e.finding_id, e.polarity) in covered]
        transcript = plain_transcript(messages[1:]) or "(conversation has not started)"
        response = llm.ask("chat_turn", {
            "disease_name": disease.name,
            "profile": profile.describe(),
            "covered": finding_block(kb, done),
            "needed": finding_block(kb, needed),
            "phrase_hints": phrase_hints(kb, bank, disease.id, needed),
            "transcript": transcript,
        })
        model = response.model or model
        provider, patient = parse_turn(response.text, allowed)
        messages.extend((provider, patient))
        covered.update((f.finding_id, f.polarity) for f in patient.findings)
        turns += 1

    chat = ChatRecord(
        case_id=case.case_id,
        disease_id=disease.id,
        mode="turnwise",
        model=model,
        messages=tuple(messages),
    )
    if remaining():
        logger.info("%s: turn cap %d reached with %d findings uncovered", case.case_id, cap, len(remaining()))
    return replace(chat, needs_repair=not check_coverage(kb, chat, case).complete)


def _problem_block(kb: KnowledgeBase, coverage: Coverage, chat: ChatRecord) -> str:
    lines = [finding_line(kb, e) for e in coverage.missing]
    for e in coverage.spurious:
        lines.append(f"- {e.finding_id} | annotated as {e.polarity.value} but the case does not say so")
    for i in coverage.overfull:
        lines.append(f"- message {i} reports more than {MAX_FINDINGS_PER_MESSAGE} findings; split it")
    return "\n".join(lines) if lines else "(none)"


def verify_and_repair(
    kb: KnowledgeBase,
    chat: ChatRecord,
    case: StructuredCase,
    llm,
    max_attempts: int = MAX_REPAIR_ATTEMPTS,
) -> ChatRecord:
    """Run the checker until the chat covers the case, at most ``max_attempts`` edits.

    A chat still incomplete after the last edit comes back ``discarded``.
    An unparseable checker reply counts as a failed edit.
    """
    coverage = check_coverage(kb, chat, case)
    if coverage.complete:
        return chat if not chat.needs_repair else replace(chat, needs_repair=False)

    system = [m for m in chat.messages if m.role is Speaker.SYSTEM]
    allowed = _allowed_ids(case)
    current = chat
    for attempt in range(1, max_attempts + 1):
        response = llm.ask("checker", {
            "findings": finding_block(kb, required_entries(kb, case)),
            "missing": _problem_block(kb, coverage, current),
            "transcript": wire_transcript(current.messages),
        })
        try:
            messages = parse_messages(response.text, allowed)
        except UnparseableResponseError as e:
            logger.info("%s: checker edit %d unparseable: %s", chat.case_id, attempt, e)
            current = replace(current, repair_attempts=attempt)
            continue
        current = replace(current, messages=(*system, *messages), repair_attempts=attempt)
        coverage = check_coverage(kb, current, case)
        if coverage.complete:
            return replace(current, needs_repair=False)

    logger.info("%s: discarded after %d checker edits", chat.case_id, max_attempts)
    return replace(current, discarded=True, needs_repair=False)


def simulate_chat(
    kb: KnowledgeBase,
    case: StructuredCase,
    llm,
    bank: PhraseBank,
    mode: str = "single",
    checker=None,
    profile_llm=None,
) -> ChatRecord:
    """Profile, generate and verify one chat.

    Only a retained chat adds its patient phrasings to ``bank``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown chat mode: {mode}")
    profile = build_profile(case, profile_llm or llm)
    if mode == "single":
        chat = generate_chat_single(kb, case, profile, llm, bank)
    else:
        chat = generate_chat_turnwise(kb, case, profile, llm, bank)
    chat = verify_and_repair(kb, chat, case, checker or llm)
    if not chat.discarded:
        bank.record_chat(chat)
    return chat
