"""
Diagnostic Scorer

Additive INTERNIST-1 style scoring over present/absent findings:

    score(d) =  sum es_weight[es]          over PRESENT findings linked to d
              - sum freq_penalty[freq]     over ABSENT findings linked to d
              - sum import_penalty[import] over PRESENT findings not linked to d

Ranking is closed-world: every disease in the KB is scored, only positive
scores enter the differential, ties break on ascending disease id.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import CaseError, ConfigError, UnknownEntityError
from .knowledge_base import KnowledgeBase

DEFAULT_DDX_SIZE = 5


class Polarity(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"


@dataclass(frozen=True)
class FindingEntry:
    finding_id: str
    polarity: Polarity

    @property
    def present(self) -> bool:
        return self.polarity is Polarity.PRESENT


@dataclass(frozen=True)
class CaseFindings:
    entries: tuple[FindingEntry, ...] = ()

    @classmethod
    def of(cls, pairs: Iterable[tuple[str, "Polarity | str"]]) -> "CaseFindings":
        """Build from ``(finding_id, polarity)`` pairs."""
        return cls(tuple(FindingEntry(fid, Polarity(p)) for fid, p in pairs))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> list[str]:
        return [e.finding_id for e in self.entries]

    def present_ids(self) -> list[str]:
        return [e.finding_id for e in self.entries if e.present]

    def polarity_of(self, finding_id: str) -> Optional[Polarity]:
        for e in self.entries:
            if e.finding_id == finding_id:
                return e.polarity
        return None

    def with_entry(self, finding_id: str, polarity: Polarity) -> "CaseFindings":
        return CaseFindings(self.entries + (FindingEntry(finding_id, polarity),))


def check_case(kb: KnowledgeBase, case: CaseFindings) -> None:
    """Raise if a finding is unknown, repeated, or breaks an exclusion group."""
    seen: set[str] = set()
    present_groups: dict[str, str] = {}
    for entry in case.entries:
        finding = kb.finding(entry.finding_id)
        if entry.finding_id in seen:
            raise CaseError(f"finding appears twice: {entry.finding_id}")
        seen.add(entry.finding_id)
        if entry.present and finding.exclusion_group:
            other = present_groups.get(finding.exclusion_group)
            if other is not None:
                raise CaseError(
                    f"exclusion group '{finding.exclusion_group}' has two present findings: "
                    f"{other}, {entry.finding_id}"
                )
            present_groups[finding.exclusion_group] = entry.finding_id


@dataclass(frozen=True)
class ScoreWeights:
    """Weight tables indexed by score 1..5 (list position 0 holds score 1)."""

    es_weight: tuple[int, ...] = (1, 4, 10, 20, 40)
    freq_penalty: tuple[int, ...] = (1, 4, 7, 18, 40)
    import_penalty: tuple[int, ...] = (2, 6, 10, 20, 40)

    def __post_init__(self):
        for name in ("es_weight", "freq_penalty", "import_penalty"):
            table = tuple(getattr(self, name))
            object.__setattr__(self, name, table)
            if len(table) != 5:
                raise ConfigError(f"{name} must have 5 entries, got {len(table)}")
            if any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in table):
                raise ConfigError(f"{name} entries must be non-negative integers")
            if any(b <= a for a, b in zip(table, table[1:])):
                raise ConfigError(f"{name} must be strictly increasing: {list(table)}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreWeights":
        unknown = set(data) - {"es_weight", "freq_penalty", "import_penalty"}
        if unknown:
            raise ConfigError(f"unknown weight keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return {
            "es_weight": list(self.es_weight),
            "freq_penalty": list(self.freq_penalty),
            "import_penalty": list(self.import_penalty),
        }


@dataclass(frozen=True)
class DdxEntry:
    disease_id: str
    score: int


@dataclass(frozen=True)
class RankedDdx:
    entries: tuple[DdxEntry, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.disease_id for e in self.entries]

    def top(self) -> Optional[DdxEntry]:
        return self.entries[0] if self.entries else None

    def seed_strictly_top(self, disease_id: str) -> bool:
        if not self.entries or self.entries[0].disease_id != disease_id:
            return False
        return len(self.entries) == 1 or self.entries[0].score > self.entries[1].score

    def to_list(self) -> list[dict]:
        return [{"disease_id": e.disease_id, "score": e.score} for e in self.entries]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "RankedDdx":
        return cls(tuple(DdxEntry(str(i["disease_id"]), int(i["score"])) for i in items))


def score_disease(kb: KnowledgeBase, w: ScoreWeights, case: CaseFindings, disease_id: str) -> int:
    disease = kb.disease(disease_id)
    score = 0
    for entry in case.entries:
        finding = kb.finding(entry.finding_id)
        link = disease.links.get(entry.finding_id)
        if entry.present:
            if link is not None:
                score += w.es_weight[link.evoking_strength - 1]
            else:
                score -= w.import_penalty[finding.importance - 1]
        elif link is not None:
            score -= w.freq_penalty[link.frequency - 1]
    return score


def score_all(
    kb: KnowledgeBase,
    w: ScoreWeights,
    case: CaseFindings,
    disease_ids: Optional[Iterable[str]] = None,
) -> dict[str, int]:
    ids = list(disease_ids) if disease_ids is not None else [d.id for d in kb.disease_records]
    return {did: score_disease(kb, w, case, did) for did in ids}


def rank_ddx(
    kb: KnowledgeBase,
    w: ScoreWeights,
    case: CaseFindings,
    max_n: int = DEFAULT_DDX_SIZE,
    disease_ids: Optional[Iterable[str]] = None,
) -> RankedDdx:
    """Top ``max_n`` positive-scoring diseases, by (score desc, id asc).

    ``disease_ids`` restricts the closed world (e.g. to rare diseases only).
    """
    if max_n < 0:
        raise ValueError("max_n must be >= 0")
    for entry in case.entries:
        if entry.finding_id not in kb.findings:
            raise UnknownEntityError(f"unknown finding: {entry.finding_id}")
    scores = score_all(kb, w, case, disease_ids)
    ranked = sorted(
        ((did, s) for did, s in scores.items() if s > 0),
        key=lambda item: (-item[1], item[0]),
    )
    return RankedDdx(tuple(DdxEntry(did, s) for did, s in ranked[:max_n]))
