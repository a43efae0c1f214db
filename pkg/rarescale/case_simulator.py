"""
Structured Case Simulator

Samples (case, differential) pairs for a seed disease from its KB links:

1. one present finding per demographic exclusion group, weighted by the
   presence probability of its frequency;
2. predisposing findings, then symptoms, by descending frequency
   (ties: import desc, id asc), each present with ``present_prob[freq]``;
3. after ``ddx_checkpoint_after`` findings the differential is scored once and
   findings shared by the seed and its competitors are sampled next, biased
   toward absent;
4. the attempt is kept only if the seed ends strictly top-scoring.

Every attempt draws from its own sub-stream derived from
``(rng_seed, disease id, attempt)``, so serial and pooled runs produce the
same cases.
"""

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import ConfigError, TooFewSnapshotsError
from .knowledge_base import FindingKind, KnowledgeBase
from .pool import WorkPool
from .scorer import CaseFindings, FindingEntry, Polarity, RankedDdx, ScoreWeights, rank_ddx

logger = logging.getLogger(__name__)

DEFAULT_PRESENT_PROB = {1: 0.15, 2: 0.30, 3: 0.50, 4: 0.75, 5: 0.90}


@dataclass(frozen=True)
class SimConfig:
    rng_seed: int = 0
    present_prob: dict = field(default_factory=lambda: dict(DEFAULT_PRESENT_PROB))
    max_attempts: int = 200
    min_valid: int = 50
    ddx_checkpoint_after: int = 6
    max_findings: int = 20
    min_findings: int = 8
    priority_present_scale: float = 0.5

    def __post_init__(self):
        probs = {int(k): float(v) for k, v in self.present_prob.items()}
        object.__setattr__(self, "present_prob", probs)
        if set(probs) != {1, 2, 3, 4, 5}:
            raise ConfigError("present_prob must map every frequency 1..5")
        if any(not 0.0 <= p <= 1.0 for p in probs.values()):
            raise ConfigError("present_prob values must lie in [0, 1]")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be non-negative")
        if self.max_attempts < 1 or self.min_valid < 0 or self.min_valid > self.max_attempts:
            raise ConfigError("need 0 <= min_valid <= max_attempts and max_attempts >= 1")
        if self.ddx_checkpoint_after < 1:
            raise ConfigError("ddx_checkpoint_after must be >= 1")
        if self.min_findings > self.max_findings:
            raise ConfigError("min_findings must not exceed max_findings")
        if not 0.0 <= self.priority_present_scale <= 1.0:
            raise ConfigError("priority_present_scale must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "present_prob": {str(k): v for k, v in sorted(self.present_prob.items())},
            "max_attempts": self.max_attempts,
            "min_valid": self.min_valid,
            "ddx_checkpoint_after": self.ddx_checkpoint_after,
            "max_findings": self.max_findings,
            "min_findings": self.min_findings,
            "priority_present_scale": self.priority_present_scale,
        }


@dataclass(frozen=True)
class StructuredCase:
    case_id: str
    seed_disease: str
    findings: CaseFindings
    ddx: RankedDdx
    demographics: dict  # exclusion group -> value, e.g. {"sex": "male"}
    rng_seed: int = 0
    attempt: int = 0

    def non_demographic(self, kb: KnowledgeBase) -> list[FindingEntry]:
        return [e for e in self.findings if kb.finding(e.finding_id).kind is not FindingKind.DEMOGRAPHIC]

    def demographic_entries(self, kb: KnowledgeBase) -> list[FindingEntry]:
        return [e for e in self.findings if kb.finding(e.finding_id).kind is FindingKind.DEMOGRAPHIC]

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "seed_disease": self.seed_disease,
            "findings": [{"id": e.finding_id, "polarity": e.polarity.value} for e in self.findings],
            "ddx": self.ddx.to_list(),
            "demographics": dict(self.demographics),
            "provenance": {"rng_seed": self.rng_seed, "attempt": self.attempt},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StructuredCase":
        prov = data.get("provenance", {})
        return cls(
            case_id=data["case_id"],
            seed_disease=data["seed_disease"],
            findings=CaseFindings.of((f["id"], f["polarity"]) for f in data["findings"]),
            ddx=RankedDdx.from_list(data["ddx"]),
            demographics=dict(data.get("demographics", {})),
            rng_seed=int(prov.get("rng_seed", 0)),
            attempt=int(prov.get("attempt", 0)),
        )


@dataclass(frozen=True)
class Snapshot:
    step: int
    ddx: RankedDdx


@dataclass(frozen=True)
class SimTrace:
    snapshots: tuple[Snapshot, ...]
    attempt: int = 0
    excluded: tuple[str, ...] = ()      # findings forced absent by an exclusion group
    prioritized: tuple[str, ...] = ()   # findings sampled from the post-checkpoint queue

    def to_dict(self) -> dict:
        return {
            "snapshots": [{"step": s.step, "ddx": s.ddx.to_list()} for s in self.snapshots],
            "attempt": self.attempt,
            "excluded": list(self.excluded),
            "prioritized": list(self.prioritized),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimTrace":
        return cls(
            snapshots=tuple(Snapshot(int(s["step"]), RankedDdx.from_list(s["ddx"])) for s in data["snapshots"]),
            attempt=int(data.get("attempt", 0)),
            excluded=tuple(data.get("excluded", ())),
            prioritized=tuple(data.get("prioritized", ())),
        )


@dataclass(frozen=True)
class Invalid:
    reason: str  # "too-few-findings" | "seed-not-top"
    attempt: int


@dataclass(frozen=True)
class CaseSet:
    disease_id: str
    cases: tuple[tuple[StructuredCase, SimTrace], ...]
    attempts: int

    @property
    def valid_count(self) -> int:
        return len(self.cases)


@dataclass(frozen=True)
class Excluded:
    disease_id: str
    valid_count: int
    attempts: int
    reasons: dict = field(default_factory=dict)


def case_record(case: StructuredCase, trace: SimTrace) -> dict:
    """One cases.jsonl line."""
    record = case.to_dict()
    record["trace"] = trace.to_dict()
    return record


def parse_case_record(record: dict) -> tuple[StructuredCase, SimTrace]:
    trace = SimTrace.from_dict(record["trace"]) if "trace" in record else SimTrace(snapshots=())
    return StructuredCase.from_dict(record), trace


# =============================================================================
# SAMPLING
# =============================================================================

def stable_key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")


def attempt_rng(rng_seed: int, disease_id: str, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([rng_seed, stable_key(disease_id), attempt]))


def _frequency_order(kb: KnowledgeBase, seed, finding_ids: Iterable[str]) -> list[str]:
    return sorted(
        finding_ids,
        key=lambda fid: (-seed.links[fid].frequency, -kb.findings[fid].importance, fid),
    )


def sample_case(
    kb: KnowledgeBase,
    weights: ScoreWeights,
    seed_disease: str,
    config: SimConfig,
    rng: np.random.Generator,
    attempt: int = 0,
) -> Union[tuple[StructuredCase, SimTrace], Invalid]:
    seed = kb.disease(seed_disease)
    prob = config.present_prob

    entries: list[FindingEntry] = []
    recorded: set[str] = set()
    present_groups: dict[str, str] = {}
    demographics: dict[str, str] = {}
    excluded: list[str] = []
    prioritized: list[str] = []
    snapshots: list[Snapshot] = []
    priority: deque[str] = deque()

    def record(fid: str, polarity: Polarity):
        entries.append(FindingEntry(fid, polarity))
        recorded.add(fid)
        group = kb.findings[fid].exclusion_group
        if polarity is Polarity.PRESENT and group:
            present_groups[group] = fid

    def checkpoint():
        if snapshots or len(entries) < config.ddx_checkpoint_after:
            return
        ddx = rank_ddx(kb, weights, CaseFindings(tuple(entries)))
        snapshots.append(Snapshot(len(entries), ddx))
        competitors = [kb.diseases[d] for d in ddx.ids() if d != seed_disease]
        shared = [
            fid for fid in seed.links
            if fid not in recorded
            and kb.findings[fid].kind is not FindingKind.DEMOGRAPHIC
            and any(fid in other.links for other in competitors)
        ]
        priority.extend(_frequency_order(kb, seed, shared))

    # Demographics: exactly one per group.
    groups: dict[str, list[str]] = {}
    for fid in seed.links:
        finding = kb.findings[fid]
        if finding.kind is FindingKind.DEMOGRAPHIC:
            groups.setdefault(finding.exclusion_group, []).append(fid)
    for group in sorted(groups):
        if len(entries) >= config.max_findings:
            break
        members = sorted(groups[group])
        p = np.array([prob[seed.links[fid].frequency] for fid in members], dtype=float)
        p = p / p.sum() if p.sum() > 0 else np.full(len(members), 1.0 / len(members))
        chosen = members[int(rng.choice(len(members), p=p))]
        record(chosen, Polarity.PRESENT)
        finding = kb.findings[chosen]
        demographics[group] = finding.value or finding.name
        checkpoint()

    predisposing = [f for f in seed.links if kb.findings[f].kind is FindingKind.PREDISPOSING]
    symptoms = [f for f in seed.links if kb.findings[f].kind is FindingKind.SYMPTOM]
    queue = deque(_frequency_order(kb, seed, predisposing) + _frequency_order(kb, seed, symptoms))

    while (priority or queue) and len(entries) < config.max_findings:
        from_priority = bool(priority)
        fid = priority.popleft() if from_priority else queue.popleft()
        if fid in recorded:
            continue
        group = kb.findings[fid].exclusion_group
        if group and group in present_groups:
            record(fid, Polarity.ABSENT)
            excluded.append(fid)
        else:
            p = prob[seed.links[fid].frequency]
            if from_priority:
                p *= config.priority_present_scale
                prioritized.append(fid)
            record(fid, Polarity.PRESENT if rng.random() < p else Polarity.ABSENT)
        checkpoint()

    case_findings = CaseFindings(tuple(entries))
    final = rank_ddx(kb, weights, case_findings)
    snapshots.append(Snapshot(len(entries), final))

    if len(entries) < config.min_findings:
        return Invalid("too-few-findings", attempt)
    if not final.seed_strictly_top(seed_disease):
        return Invalid("seed-not-top", attempt)

    case = StructuredCase(
        case_id=f"{seed_disease}-{attempt:04d}",
        seed_disease=seed_disease,
        findings=case_findings,
        ddx=final,
        demographics=demographics,
        rng_seed=config.rng_seed,
        attempt=attempt,
    )
    trace = SimTrace(
        snapshots=tuple(snapshots),
        attempt=attempt,
        excluded=tuple(excluded),
        prioritized=tuple(prioritized),
    )
    return case, trace


def simulate_disease(
    kb: KnowledgeBase,
    weights: ScoreWeights,
    seed_disease: str,
    config: SimConfig,
) -> Union[CaseSet, Excluded]:
    """Run every attempt; keep the disease only with at least ``min_valid`` valid cases."""
    kb.disease(seed_disease)
    valid: list[tuple[StructuredCase, SimTrace]] = []
    reasons: dict[str, int] = {}
    for attempt in range(config.max_attempts):
        rng = attempt_rng(config.rng_seed, seed_disease, attempt)
        result = sample_case(kb, weights, seed_disease, config, rng, attempt)
        if isinstance(result, Invalid):
            reasons[result.reason] = reasons.get(result.reason, 0) + 1
        else:
            valid.append(result)

    if len(valid) < config.min_valid:
        logger.info("excluded %s: %d/%d valid", seed_disease, len(valid), config.max_attempts)
        return Excluded(seed_disease, len(valid), config.max_attempts, dict(sorted(reasons.items())))
    logger.debug("kept %s: %d/%d valid", seed_disease, len(valid), config.max_attempts)
    return CaseSet(seed_disease, tuple(valid), config.max_attempts)


def discarded_diagnoses(trace: SimTrace) -> list[str]:
    """Diseases in an earlier differential that dropped out of the final one."""
    if len(trace.snapshots) < 2:
        raise TooFewSnapshotsError(f"need at least 2 snapshots, got {len(trace.snapshots)}")
    final = set(trace.snapshots[-1].ddx.ids())
    out: list[str] = []
    for snap in trace.snapshots[:-1]:
        for did in snap.ddx.ids():
            if did not in final and did not in out:
                out.append(did)
    return out


# =============================================================================
# WHOLE-KB RUN
# =============================================================================

@dataclass(frozen=True)
class SimulationReport:
    results: tuple[Union[CaseSet, Excluded], ...]

    def cases(self) -> list[tuple[StructuredCase, SimTrace]]:
        return [pair for r in self.results if isinstance(r, CaseSet) for pair in r.cases]

    def kept(self) -> list[str]:
        return [r.disease_id for r in self.results if isinstance(r, CaseSet)]

    def excluded(self) -> list[str]:
        return [r.disease_id for r in self.results if isinstance(r, Excluded)]

    def to_dict(self) -> dict:
        rows = []
        for r in self.results:
            row = {
                "disease_id": r.disease_id,
                "status": "kept" if isinstance(r, CaseSet) else "excluded",
                "valid": r.valid_count,
                "attempts": r.attempts,
            }
            if isinstance(r, Excluded):
                row["reasons"] = dict(r.reasons)
            rows.append(row)
        return {
            "diseases": rows,
            "kept": len(self.kept()),
            "excluded": len(self.excluded()),
            "cases": len(self.cases()),
        }

    def render(self) -> str:
        lines = [f"kept {len(self.kept())} diseases, excluded {len(self.excluded())}, {len(self.cases())} cases", ""]
        for r in self.results:
            status = "kept" if isinstance(r, CaseSet) else "EXCLUDED"
            lines.append(f"{r.disease_id:<10} {status:<9} {r.valid_count:>4}/{r.attempts}")
        return "\n".join(lines) + "\n"


def simulate_kb(
    kb: KnowledgeBase,
    weights: ScoreWeights,
    config: SimConfig,
    disease_ids: Optional[Iterable[str]] = None,
    workers: int = 1,
) -> SimulationReport:
    ids = sorted(disease_ids) if disease_ids is not None else [d.id for d in kb.disease_records]
    for did in ids:
        kb.disease(did)
    pool = WorkPool(workers, label="simulate")
    results = pool.map(lambda did: simulate_disease(kb, weights, did, config), ids)
    return SimulationReport(tuple(results))
