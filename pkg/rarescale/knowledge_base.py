"""
Knowledge Base

Diseases, findings and the weighted links between them, plus the file format,
validator and a seeded synthetic generator.

KB file format (UTF-8 JSON, one object)::

    {
      "format": "rarescale-kb",
      "version": 1,
      "findings": [
        {"id": "F001", "name": "fever", "kind": "symptom", "import": 2,
         "definition": "...",          # optional
         "exclusion_group": "onset",   # optional, required for demographics
         "value": "male"}              # optional, demographic slot value
      ],
      "diseases": [
        {"id": "D001", "name": "brucellosis", "categories": ["Infectious disease"],
         "rare": true,                 # optional, default true
         "links": [{"finding": "F001", "evoking_strength": 3, "frequency": 4}]}
      ]
    }

``kind`` is one of ``demographic``, ``predisposing``, ``symptom``. Every score
is an integer in 1..5. ``write_kb`` emits findings, diseases and links sorted
by id with a fixed key order, so ``load_kb(write_kb(kb)) == kb``.

Disease names may embed an alias ("neurogenic osteoarthropathy alias charcot
joint disease"); ``names_match`` accepts either side.
"""

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .errors import (
    InfeasibleParametersError,
    KbIntegrityError,
    KbParseError,
    KbRangeError,
    UnknownEntityError,
)

KB_FORMAT = "rarescale-kb"
KB_VERSION = 1
SCORE_RANGE = range(1, 6)


class FindingKind(str, Enum):
    DEMOGRAPHIC = "demographic"
    PREDISPOSING = "predisposing"
    SYMPTOM = "symptom"


@dataclass(frozen=True)
class Finding:
    id: str
    name: str
    kind: FindingKind
    importance: int  # serialized as "import"
    definition: Optional[str] = None
    exclusion_group: Optional[str] = None
    value: Optional[str] = None


@dataclass(frozen=True)
class Link:
    evoking_strength: int
    frequency: int


@dataclass(frozen=True)
class DiseaseEntry:
    id: str
    name: str
    categories: tuple[str, ...]
    links: Mapping[str, Link] = field(default_factory=dict)
    rare: bool = True

    def linked(self, finding_id: str) -> Optional[Link]:
        return self.links.get(finding_id)


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by ``validate_kb``."""
    entity_id: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        text = f"{self.rule}: {self.entity_id}"
        return f"{text} ({self.detail})" if self.detail else text


@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable KB. Records are kept sorted by id; duplicates are preserved
    so that ``validate_kb`` can report them."""

    finding_records: tuple[Finding, ...]
    disease_records: tuple[DiseaseEntry, ...]

    @classmethod
    def build(cls, findings: Iterable[Finding], diseases: Iterable[DiseaseEntry]) -> "KnowledgeBase":
        return cls(
            finding_records=tuple(sorted(findings, key=lambda f: f.id)),
            disease_records=tuple(sorted(diseases, key=lambda d: d.id)),
        )

    @cached_property
    def findings(self) -> dict[str, Finding]:
        return {f.id: f for f in self.finding_records}

    @cached_property
    def diseases(self) -> dict[str, DiseaseEntry]:
        return {d.id: d for d in self.disease_records}

    @cached_property
    def categories(self) -> frozenset[str]:
        return frozenset(c for d in self.disease_records for c in d.categories)

    @cached_property
    def exclusion_groups(self) -> dict[str, tuple[str, ...]]:
        groups: dict[str, list[str]] = {}
        for f in self.finding_records:
            if f.exclusion_group:
                groups.setdefault(f.exclusion_group, []).append(f.id)
        return {g: tuple(ids) for g, ids in sorted(groups.items())}

    def finding(self, finding_id: str) -> Finding:
        try:
            return self.findings[finding_id]
        except KeyError:
            raise UnknownEntityError(f"unknown finding: {finding_id}") from None

    def disease(self, disease_id: str) -> DiseaseEntry:
        try:
            return self.diseases[disease_id]
        except KeyError:
            raise UnknownEntityError(f"unknown disease: {disease_id}") from None

    def disease_by_name(self, name: str) -> Optional[DiseaseEntry]:
        for d in self.disease_records:
            if names_match(d.name, name):
                return d
        return None

    def rare_disease_ids(self) -> list[str]:
        return [d.id for d in self.disease_records if d.rare]


# =============================================================================
# NAME MATCHING
# =============================================================================

_WS = re.compile(r"\s+")
_ALIAS = " alias "


def normalize_name(name: str) -> str:
    """Case-fold and collapse whitespace."""
    return _WS.sub(" ", name).strip().casefold()


def name_forms(name: str) -> frozenset[str]:
    """The normalized name plus each side of an embedded alias."""
    norm = normalize_name(name)
    forms = {norm}
    if _ALIAS in norm:
        forms.update(part.strip() for part in norm.split(_ALIAS) if part.strip())
    return frozenset(forms)


def names_match(a: str, b: str) -> bool:
    return bool(name_forms(a) & name_forms(b))


# =============================================================================
# VALIDATION
# =============================================================================

def validate_kb(kb: KnowledgeBase) -> list[Violation]:
    """Return every invariant violation; an empty list means the KB is valid."""
    violations: list[Violation] = []

    seen: set[str] = set()
    for f in kb.finding_records:
        if f.id in seen:
            violations.append(Violation(f.id, "duplicate-id", "finding"))
        seen.add(f.id)
        if f.importance not in SCORE_RANGE:
            violations.append(Violation(f.id, "score-range", f"import={f.importance}"))
        if f.kind is FindingKind.DEMOGRAPHIC and not f.exclusion_group:
            violations.append(Violation(f.id, "demographic-without-group"))

    seen = set()
    for d in kb.disease_records:
        if d.id in seen:
            violations.append(Violation(d.id, "duplicate-id", "disease"))
        seen.add(d.id)
        if not d.categories:
            violations.append(Violation(d.id, "no-categories"))
        has_symptom = False
        for fid, link in sorted(d.links.items()):
            finding = kb.findings.get(fid)
            if finding is None:
                violations.append(Violation(d.id, "dangling-link", fid))
                continue
            if finding.kind is FindingKind.SYMPTOM:
                has_symptom = True
            for label, score in (("evoking_strength", link.evoking_strength), ("frequency", link.frequency)):
                if score not in SCORE_RANGE:
                    violations.append(Violation(d.id, "score-range", f"{fid} {label}={score}"))
        if not has_symptom:
            violations.append(Violation(d.id, "no-symptom-links"))

    # A demographic group must hold demographic findings only.
    for group, members in kb.exclusion_groups.items():
        kinds = {kb.findings[m].kind for m in members}
        if FindingKind.DEMOGRAPHIC in kinds and len(kinds) > 1:
            violations.append(Violation(group, "mixed-exclusion-group"))

    return violations


# =============================================================================
# LOAD / WRITE
# =============================================================================

def _require(record: dict, key: str, where: str):
    if key not in record:
        raise KbParseError(f"{where}: missing field '{key}'")
    return record[key]


def _list_field(record: dict, key: str, where: str) -> list:
    value = _require(record, key, where)
    if not isinstance(value, list):
        raise KbParseError(f"{where}: field '{key}' must be a list")
    return value


def _int_field(record: dict, key: str, where: str) -> int:
    value = _require(record, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise KbParseError(f"{where}: field '{key}' must be an integer")
    return value


def _parse_finding(record: dict, index: int) -> Finding:
    if not isinstance(record, dict):
        raise KbParseError(f"findings[{index}]: expected an object")
    fid = _require(record, "id", f"findings[{index}]")
    where = f"finding {fid}"
    try:
        kind = FindingKind(_require(record, "kind", where))
    except ValueError:
        raise KbParseError(f"{where}: unknown kind '{record['kind']}'") from None
    return Finding(
        id=str(fid),
        name=str(_require(record, "name", where)),
        kind=kind,
        importance=_int_field(record, "import", where),
        definition=record.get("definition"),
        exclusion_group=record.get("exclusion_group"),
        value=record.get("value"),
    )


def _parse_disease(record: dict, index: int) -> DiseaseEntry:
    if not isinstance(record, dict):
        raise KbParseError(f"diseases[{index}]: expected an object")
    did = _require(record, "id", f"diseases[{index}]")
    where = f"disease {did}"
    links: dict[str, Link] = {}
    for i, raw in enumerate(_list_field(record, "links", where)):
        if not isinstance(raw, dict):
            raise KbParseError(f"{where}: links[{i}] must be an object")
        fid = str(_require(raw, "finding", where))
        if fid in links:
            raise KbParseError(f"{where}: duplicate link to {fid}")
        links[fid] = Link(
            evoking_strength=_int_field(raw, "evoking_strength", f"{where} link {fid}"),
            frequency=_int_field(raw, "frequency", f"{where} link {fid}"),
        )
    categories = tuple(_list_field(record, "categories", where))
    if not all(isinstance(c, str) for c in categories):
        raise KbParseError(f"{where}: categories must be strings")
    return DiseaseEntry(
        id=str(did),
        name=str(_require(record, "name", where)),
        categories=categories,
        links=links,
        rare=bool(record.get("rare", True)),
    )


def loads_kb(text: str, *, validate: bool = True) -> KnowledgeBase:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise KbParseError(f"malformed KB file: {e.msg} (line {e.lineno}, column {e.colno})") from None
    if not isinstance(data, dict) or data.get("format") != KB_FORMAT:
        raise KbParseError(f"not a {KB_FORMAT} file")
    if data.get("version") != KB_VERSION:
        raise KbParseError(f"unsupported KB version: {data.get('version')}")

    kb = KnowledgeBase.build(
        (_parse_finding(r, i) for i, r in enumerate(_list_field(data, "findings", "KB"))),
        (_parse_disease(r, i) for i, r in enumerate(_list_field(data, "diseases", "KB"))),
    )
    if validate:
        violations = validate_kb(kb)
        if violations:
            message = "; ".join(str(v) for v in violations)
            if any(v.rule == "score-range" for v in violations):
                raise KbRangeError(message, violations)
            raise KbIntegrityError(message, violations)
    return kb


def load_kb(path: Union[str, Path], *, validate: bool = True) -> KnowledgeBase:
    """Load a KB file; raises ``KbParseError`` / ``KbIntegrityError`` / ``KbRangeError``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise KbParseError(f"cannot read KB file {path}: {e.strerror}") from None
    return loads_kb(text, validate=validate)


def _finding_to_dict(f: Finding) -> dict:
    out = {"id": f.id, "name": f.name, "kind": f.kind.value, "import": f.importance}
    for key in ("definition", "exclusion_group", "value"):
        value = getattr(f, key)
        if value is not None:
            out[key] = value
    return out


def _disease_to_dict(d: DiseaseEntry) -> dict:
    out = {"id": d.id, "name": d.name, "categories": list(d.categories)}
    if not d.rare:
        out["rare"] = False
    out["links"] = [
        {"finding": fid, "evoking_strength": link.evoking_strength, "frequency": link.frequency}
        for fid, link in sorted(d.links.items())
    ]
    return out


def dumps_kb(kb: KnowledgeBase) -> str:
    data = {
        "format": KB_FORMAT,
        "version": KB_VERSION,
        "findings": [_finding_to_dict(f) for f in kb.finding_records],
        "diseases": [_disease_to_dict(d) for d in kb.disease_records],
    }
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def write_kb(kb: KnowledgeBase, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_kb(kb), encoding="utf-8")
    return path


# =============================================================================
# SYNTHETIC KB
# =============================================================================

_SITES = [
    "abdomen", "chest", "head", "back", "joint", "skin", "eye", "throat",
    "muscle", "flank", "neck", "leg", "arm", "ear", "mouth", "pelvis",
]
_DESCRIPTORS = [
    "pain", "swelling", "numbness", "itching", "stiffness", "weakness",
    "rash", "bleeding", "tenderness", "burning", "cramping", "discharge",
]
_PREDISPOSING = [
    "smoking history", "recent travel", "animal exposure", "recent surgery",
    "transplant history", "alcohol use", "family history", "immunosuppression",
]
_SYLLABLES = ["ka", "lo", "ver", "mi", "tan", "ro", "sel", "du", "qua", "bri", "no", "zen", "fal", "thu"]
_SUFFIXES = ["syndrome", "disease", "fever", "myopathy", "dystrophy", "arteritis", "deficiency"]
CATEGORIES = [
    "Infectious disease",
    "Metabolic disorders",
    "Neoplastic disease",
    "Immune system disorders",
    "Degenerative disorders",
    "Endocrine disease",
    "Impaired cardiovascular function",
    "Musculoskeletal disorders",
]

_SEX = [("dem-sex-female", "sex female", "female"), ("dem-sex-male", "sex male", "male")]
_AGE = [
    ("dem-age-0-25", "age 0 to 25", "0-25"),
    ("dem-age-26-55", "age 26 to 55", "26-55"),
    ("dem-age-56-90", "age greater than 55", "56-90"),
]


def _unique(name: str, taken: set[str]) -> str:
    candidate, i = name, 2
    while candidate in taken:
        candidate = f"{name} {i}"
        i += 1
    taken.add(candidate)
    return candidate


def synth_kb(
    rng_seed: int,
    n_diseases: int,
    n_findings: int,
    links_per_disease: tuple[int, int] = (8, 14),
    n_categories: int = 6,
) -> KnowledgeBase:
    """Deterministic synthetic KB standing in for a curated expert-system KB.

    ``n_findings`` counts the non-demographic findings; a sex group and an age
    group of demographic findings are always added on top.
    """
    lo, hi = links_per_disease
    if n_diseases < 1:
        raise InfeasibleParametersError("n_diseases must be >= 1")
    if lo < 1 or lo > hi:
        raise InfeasibleParametersError(f"bad links_per_disease range: {lo}-{hi}")
    if n_findings < hi:
        raise InfeasibleParametersError(
            f"links per disease ({hi}) exceed available findings ({n_findings})"
        )
    n_categories = max(1, min(n_categories, len(CATEGORIES)))
    rng = np.random.default_rng(rng_seed)
    width = max(3, len(str(max(n_findings, n_diseases))))

    n_predisposing = n_findings // 7
    predisposing = set(int(i) for i in rng.choice(n_findings, size=n_predisposing, replace=False))
    symptom_idx = [i for i in range(n_findings) if i not in predisposing]

    groups: dict[int, str] = {}
    pairs = rng.permutation(symptom_idx)[: 2 * (len(symptom_idx) // 20)]
    for g in range(len(pairs) // 2):
        groups[int(pairs[2 * g])] = f"grp-{g + 1}"
        groups[int(pairs[2 * g + 1])] = f"grp-{g + 1}"

    taken: set[str] = set()
    findings: list[Finding] = []
    for i in range(n_findings):
        if i in predisposing:
            kind = FindingKind.PREDISPOSING
            base = _PREDISPOSING[int(rng.integers(len(_PREDISPOSING)))]
        else:
            kind = FindingKind.SYMPTOM
            base = f"{_SITES[int(rng.integers(len(_SITES)))]} {_DESCRIPTORS[int(rng.integers(len(_DESCRIPTORS)))]}"
        name = _unique(base, taken)
        findings.append(Finding(
            id=f"F{i + 1:0{width}d}",
            name=name,
            kind=kind,
            importance=int(rng.integers(1, 6)),
            definition=f"Patient reports {name}." if rng.random() < 0.3 else None,
            exclusion_group=groups.get(i),
        ))
    for fid, name, value in _SEX:
        findings.append(Finding(fid, name, FindingKind.DEMOGRAPHIC, 1, exclusion_group="sex", value=value))
    for fid, name, value in _AGE:
        findings.append(Finding(fid, name, FindingKind.DEMOGRAPHIC, 1, exclusion_group="age", value=value))

    disease_names: set[str] = set()
    diseases: list[DiseaseEntry] = []
    for d in range(n_diseases):
        syllables = rng.choice(_SYLLABLES, size=3)
        stem = "".join(str(s) for s in syllables).capitalize()
        name = f"{stem} {_SUFFIXES[int(rng.integers(len(_SUFFIXES)))]}"
        if d % 7 == 6:
            name = f"{name} alias {stem.lower()} complex"
        name = _unique(name, disease_names)

        n_cat = 1 + int(rng.random() < 0.3)
        cats = sorted(str(c) for c in rng.choice(CATEGORIES[:n_categories], size=min(n_cat, n_categories), replace=False))

        k = int(rng.integers(lo, hi + 1))
        chosen = [int(i) for i in rng.choice(n_findings, size=k, replace=False)]
        if not any(i in symptom_idx for i in chosen):
            spare = [i for i in symptom_idx if i not in chosen]
            chosen[0] = spare[int(rng.integers(len(spare)))]
        links = {
            findings[i].id: Link(int(rng.integers(1, 6)), int(rng.integers(1, 6)))
            for i in chosen
        }
        if rng.random() < 0.2:
            fid = _SEX[int(rng.integers(2))][0]
            links[fid] = Link(1, 5)
        else:
            for fid, _, _ in _SEX:
                links[fid] = Link(1, 3)
        start = int(rng.integers(3))
        stop = int(rng.integers(start, 3)) + 1
        for fid, _, _ in _AGE[start:stop]:
            links[fid] = Link(1, int(rng.integers(2, 5)))

        diseases.append(DiseaseEntry(
            id=f"D{d + 1:0{width}d}",
            name=name,
            categories=tuple(cats),
            links=links,
        ))

    return KnowledgeBase.build(findings, diseases)
