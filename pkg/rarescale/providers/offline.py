"""
Offline Responder

Deterministic stand-in for a remote model that answers every packaged prompt
template by reading the structured parts of the prompt (finding blocks, judge
lines, candidate blocks). It lets the whole pipeline run without network
access; it makes no attempt to be clinically sensible.
"""

import hashlib
import json
import re
from typing import Optional

from ..knowledge_base import names_match, normalize_name
from .types import ChatTurnRequest

_FINDING_LINE = re.compile(r"^- (?P<id>\S+) \| (?P<name>[^|]+?) \| (?P<polarity>present|absent)\b")
_NUMBERED = re.compile(r"^\s*\d+[.)]\s*(?P<name>.+?)\s*$")
_KEY_VALUE = re.compile(r"^(?P<key>[a-z_]+)=(?P<value>.+)$")

PRESENT_PHRASES = (
    "I have had {name}.",
    "I've been dealing with {name} lately.",
    "There has been some {name}.",
    "I keep noticing {name}.",
)
ABSENT_PHRASES = (
    "No, I haven't had any {name}.",
    "I don't think I've had {name}.",
    "No {name} that I've noticed.",
    "Not really, no {name}.",
)
OPENING = "What brings you in today?"
FOLLOW_UPS = (
    "Can you tell me more about how you have been feeling?",
    "Have you noticed anything else?",
    "Is there anything else going on with your health?",
)
COMMON_DIAGNOSES = (
    "Viral infection",
    "Anxiety disorder",
    "Migraine",
    "Gastroenteritis",
    "Iron deficiency anemia",
)
RARE_GUESSES = (
    "Fabry disease",
    "Wilson disease",
    "Pompe disease",
    "Behcet disease",
    "Erdheim-Chester disease",
)
NAMES = ("Alex Morgan", "Sam Rivera", "Jordan Lee", "Taylor Brooks", "Casey Nguyen", "Robin Patel")
RACES = ("White", "Black", "Asian", "Hispanic", "Mixed")
EDUCATION = ("High school", "Some college", "Bachelor's degree", "Master's degree", "Trade school")
LOCATIONS = ("Ohio", "Texas", "Oregon", "Maine", "Georgia", "Arizona")
CHUNK = 2


def _digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _block(text: str, start: str, end: str) -> list[str]:
    lines, inside, out = text.splitlines(), False, []
    for line in lines:
        stripped = line.strip()
        if stripped == start:
            inside, out = True, []
            continue
        if inside and stripped == end:
            return out
        if inside:
            out.append(stripped)
    return out


def _findings(lines: list[str]) -> list[tuple[str, str, str]]:
    found = []
    for line in lines:
        m = _FINDING_LINE.match(line)
        if m:
            found.append((m["id"], m["name"].strip(), m["polarity"]))
    return found


def _line_value(text: str, prefix: str) -> Optional[str]:
    for line in text.splitlines():
        if line.startswith(prefix):
            return line[len(prefix):].strip()
    return None


def _hint_count(text: str, finding_id: str) -> int:
    for line in text.splitlines():
        if line.startswith(f"- {finding_id} ("):
            return line.count('"') // 2
    return 0


def _phrase(finding: tuple[str, str, str], variant: int) -> str:
    _, name, polarity = finding
    table = PRESENT_PHRASES if polarity == "present" else ABSENT_PHRASES
    return table[variant % len(table)].format(name=name)


def _turn_lines(findings: list[tuple[str, str, str]], provider: str, prompt: str) -> list[str]:
    phrases = " ".join(_phrase(f, _hint_count(prompt, f[0])) for f in findings)
    notes = "; ".join(f"{fid}={polarity}" for fid, _, polarity in findings)
    return [f"PROVIDER: {provider}", f"PATIENT: {phrases}", f"FINDINGS: {notes or 'none'}"]


class OfflineResponder:
    def __call__(self, req: ChatTurnRequest) -> str:
        handler = getattr(self, f"_answer_{req.tag}", None)
        if handler is None:
            from ..errors import MockScriptExhaustedError
            raise MockScriptExhaustedError(f"offline responder has no answer for tag '{req.tag}'")
        return handler(req.text())

    def _whole_chat(self, prompt: str, findings: list[tuple[str, str, str]]) -> str:
        lines = ["BEGIN CHAT"]
        chunks = [findings[i:i + CHUNK] for i in range(0, len(findings), CHUNK)] or [[]]
        for i, chunk in enumerate(chunks):
            provider = OPENING if i == 0 else FOLLOW_UPS[(i - 1) % len(FOLLOW_UPS)]
            lines.extend(_turn_lines(chunk, provider, prompt))
        lines.append("END CHAT")
        return "\n".join(lines)

    def _answer_chat_single(self, prompt: str) -> str:
        return self._whole_chat(prompt, _findings(_block(prompt, "FINDINGS:", "END FINDINGS")))

    def _answer_checker(self, prompt: str) -> str:
        return self._whole_chat(prompt, _findings(_block(prompt, "FINDINGS:", "END FINDINGS")))

    def _answer_chat_turn(self, prompt: str) -> str:
        needed = _findings(_block(prompt, "NEEDED FINDINGS:", "END NEEDED"))[:CHUNK]
        turns = sum(
            1 for line in prompt.splitlines()
            if line.startswith("PATIENT: ") and line != "PATIENT: <message>"
        )
        provider = OPENING if turns == 0 else FOLLOW_UPS[(turns - 1) % len(FOLLOW_UPS)]
        return "\n".join(["BEGIN TURN", *_turn_lines(needed, provider, prompt), "END TURN"])

    def _answer_profile(self, prompt: str) -> str:
        fixed = {}
        for line in prompt.splitlines():
            m = _KEY_VALUE.match(line.strip())
            if m:
                fixed[m["key"]] = m["value"].strip()
        h = _digest(prompt)
        lo = int(fixed.get("age_min", 18))
        hi = int(fixed.get("age_max", 85))
        profile = {
            "name": NAMES[h % len(NAMES)],
            "gender": fixed.get("gender", ("female", "male")[(h >> 3) % 2]),
            "age": lo + (h >> 5) % (hi - lo + 1),
            "race": fixed.get("race", RACES[(h >> 9) % len(RACES)]),
            "education": fixed.get("education", EDUCATION[(h >> 13) % len(EDUCATION)]),
            "location": fixed.get("location", LOCATIONS[(h >> 17) % len(LOCATIONS)]),
        }
        return json.dumps(profile, sort_keys=True)

    def _answer_ddx(self, prompt: str) -> str:
        names = []
        inside = False
        for line in prompt.splitlines():
            stripped = line.strip()
            if stripped == "[RARE CANDIDATES]":
                inside = True
            elif stripped == "[/RARE CANDIDATES]":
                inside = False
            elif inside and stripped.startswith("- "):
                names.append(stripped[2:].strip())
        for common in COMMON_DIAGNOSES:
            if len(names) >= 5:
                break
            names.append(common)
        body = [f"{i}. {name}" for i, name in enumerate(names[:5], 1)]
        return "\n".join(["BEGIN DDX", *body, "END DDX"])

    def _answer_rare_candidates(self, prompt: str) -> str:
        body = [f"{i}. {name}" for i, name in enumerate(RARE_GUESSES, 1)]
        return "\n".join(["BEGIN LIST", *body, "END LIST"])

    def _answer_candidates(self, prompt: str) -> str:
        return "\n".join(RARE_GUESSES)

    def _answer_judge_binary(self, prompt: str) -> str:
        truth = _line_value(prompt, "TRUE DIAGNOSIS:") or ""
        candidate = _line_value(prompt, "CANDIDATE DIAGNOSIS:") or ""
        return "yes" if truth and candidate and names_match(truth, candidate) else "no"

    def _answer_judge_similarity(self, prompt: str) -> str:
        truth = _line_value(prompt, "TRUE DIAGNOSIS:") or ""
        ddx = []
        for line in _block(prompt, "DIFFERENTIAL:", "END DIFFERENTIAL"):
            m = _NUMBERED.match(line)
            ddx.append(m["name"] if m else line)
        if any(names_match(truth, name) for name in ddx):
            return "exact match"
        words = {w for w in normalize_name(truth).split() if len(w) > 3}
        if any(words & set(normalize_name(name).split()) for name in ddx):
            return "somewhat related"
        return "unrelated"

    def _answer_negative_screen(self, prompt: str) -> str:
        diagnosis = _line_value(prompt, "RARE DISEASE:") or "the disease"
        if _digest(diagnosis) % 2 == 0:
            return f"VERDICT: yes\nEXPLANATION: The reported findings are compatible with {diagnosis}."
        return f"VERDICT: no\nEXPLANATION: Several reported findings argue against {diagnosis}."
