"""
Dataset Store

Corpus records (case + retained chat), stratified train/val/test splits with
structured-case dedup, corpus statistics, and candidate-model training pairs.

Files are JSON-lines with sorted keys (see jsonl.py). Two structured cases
are "the same" when they share the seed disease and the multiset of
(finding, polarity) pairs; sampling order is ignored.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .case_simulator import SimTrace, StructuredCase, case_record, parse_case_record
from .chat_simulator import ChatRecord, plain_transcript
from .errors import ConfigError, DatasetError, DegenerateRatiosError, EmptyInputError, LabelLeakError
from .jsonl import read_jsonl, write_jsonl
from .knowledge_base import KnowledgeBase

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class CorpusRecord:
    case: StructuredCase
    chat: ChatRecord
    trace: Optional[SimTrace] = None
    created_at: str = ""

    def __post_init__(self):
        if self.chat.discarded:
            raise DatasetError(f"discarded chat cannot enter the corpus: {self.chat.case_id}")
        if self.chat.case_id != self.case.case_id:
            raise DatasetError(f"chat {self.chat.case_id} does not belong to case {self.case.case_id}")

    @property
    def case_id(self) -> str:
        return self.case.case_id

    @property
    def disease_id(self) -> str:
        return self.case.seed_disease

    def case_key(self) -> tuple:
        return case_key(self.case)

    def to_dict(self) -> dict:
        case = case_record(self.case, self.trace) if self.trace else self.case.to_dict()
        return {
            "case": case,
            "chat": self.chat.to_dict(),
            "provenance": {
                "model": self.chat.model,
                "rng_seed": self.case.rng_seed,
                "attempt": self.case.attempt,
                "created_at": self.created_at,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusRecord":
        case, trace = parse_case_record(data["case"])
        return cls(
            case=case,
            chat=ChatRecord.from_dict(data["chat"]),
            trace=trace if trace.snapshots else None,
            created_at=data.get("provenance", {}).get("created_at", ""),
        )


def case_key(case: StructuredCase) -> tuple:
    return (case.seed_disease, tuple(sorted((e.finding_id, e.polarity.value) for e in case.findings)))


def build_corpus(
    cases: Iterable[tuple[StructuredCase, SimTrace]],
    chats: Iterable[ChatRecord],
    created_at: Optional[str] = None,
) -> list[CorpusRecord]:
    """Join retained chats to their cases; discarded chats are skipped."""
    by_id = {case.case_id: (case, trace) for case, trace in cases}
    stamp = created_at or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    records = []
    for chat in chats:
        if chat.discarded:
            continue
        if chat.case_id not in by_id:
            raise DatasetError(f"chat references unknown case: {chat.case_id}")
        case, trace = by_id[chat.case_id]
        records.append(CorpusRecord(case, chat, trace, stamp))
    return sorted(records, key=lambda r: r.case_id)


def write_corpus(path: Union[str, Path], records: Iterable[CorpusRecord]) -> int:
    return write_jsonl(path, (r.to_dict() for r in records))


def read_corpus(path: Union[str, Path]) -> list[CorpusRecord]:
    return [CorpusRecord.from_dict(d) for d in read_jsonl(path)]


# =============================================================================
# SPLITS
# =============================================================================

def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        ratios = (self.train, self.val, self.test)
        if any(r <= 0 for r in ratios):
            raise DegenerateRatiosError(f"split ratios must be positive: {ratios}")
        if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise DegenerateRatiosError(f"split ratios must sum to 1: {ratios}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SplitSpec":
        unknown = set(data) - {"train", "val", "test", "seed"}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test, "seed": self.seed}


@dataclass(frozen=True)
class SplitResult:
    train: tuple[CorpusRecord, ...]
    val: tuple[CorpusRecord, ...]
    test: tuple[CorpusRecord, ...]
    dedup_count: int = 0
    dropped: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, tuple[CorpusRecord, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def report(self) -> dict:
        return {
            "sizes": {name: len(recs) for name, recs in self.as_dict().items()},
            "dedup_count": self.dedup_count,
            "dropped_case_ids": list(self.dropped),
        }


def _stratum_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val, n_test = _half_up(n * spec.val), _half_up(n * spec.test)
    while n_val + n_test > n:
        if n_val >= n_test:
            n_val -= 1
        else:
            n_test -= 1
    if n >= 3:
        while n - n_val - n_test < 1:
            if n_val >= n_test:
                n_val -= 1
            else:
                n_test -= 1
    return n - n_val - n_test, n_val, n_test


def split_corpus(records: Sequence[CorpusRecord], spec: SplitSpec) -> SplitResult:
    """Stratified split by seed disease, then drop train cases seen in val/test."""
    if not records:
        raise EmptyInputError("cannot split an empty corpus")
    rng = np.random.default_rng(spec.seed)
    strata: dict[str, list[CorpusRecord]] = {}
    for r in records:
        strata.setdefault(r.disease_id, []).append(r)

    train: list[CorpusRecord] = []
    val: list[CorpusRecord] = []
    test: list[CorpusRecord] = []
    for disease_id in sorted(strata):
        items = sorted(strata[disease_id], key=lambda r: r.case_id)
        order = [items[i] for i in rng.permutation(len(items))]
        n_train, n_val, n_test = _stratum_sizes(len(items), spec)
        test.extend(order[:n_test])
        val.extend(order[n_test:n_test + n_val])
        train.extend(order[n_test + n_val:])

    held_out = {r.case_key() for r in val} | {r.case_key() for r in test}
    kept = [r for r in train if r.case_key() not in held_out]
    dropped = sorted(r.case_id for r in train if r.case_key() in held_out)
    if dropped:
        logger.info("dropped %d train records duplicating a val/test case", len(dropped))

    def ordered(recs):
        return tuple(sorted(recs, key=lambda r: r.case_id))

    return SplitResult(ordered(kept), ordered(val), ordered(test), len(dropped), tuple(dropped))


def downsample_by_disease(records: Sequence[CorpusRecord], fraction: float, seed: int = 0) -> list[CorpusRecord]:
    """Keep ``fraction`` of each disease's records (at least one per disease)."""
    if not 0.0 < fraction <= 1.0:
        raise DegenerateRatiosError(f"fraction must lie in (0, 1]: {fraction}")
    rng = np.random.default_rng(seed)
    strata: dict[str, list[CorpusRecord]] = {}
    for r in records:
        strata.setdefault(r.disease_id, []).append(r)
    kept: list[CorpusRecord] = []
    for disease_id in sorted(strata):
        items = sorted(strata[disease_id], key=lambda r: r.case_id)
        k = max(1, _half_up(len(items) * fraction))
        picks = sorted(int(i) for i in rng.choice(len(items), size=k, replace=False))
        kept.extend(items[i] for i in picks)
    return sorted(kept, key=lambda r: r.case_id)


# =============================================================================
# STATISTICS
# =============================================================================

@dataclass(frozen=True)
class SplitStats:
    n: int
    findings_mean: float
    findings_std: float
    messages_mean: float
    messages_std: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "findings_mean": round(self.findings_mean, 2),
            "findings_std": round(self.findings_std, 2),
            "messages_mean": round(self.messages_mean, 2),
            "messages_std": round(self.messages_std, 2),
        }


def split_stats(records: Sequence[CorpusRecord]) -> SplitStats:
    if not records:
        raise EmptyInputError("cannot compute statistics of an empty split")
    findings = np.array([len(r.case.findings) for r in records], dtype=float)
    messages = np.array([len(r.chat.messages) for r in records], dtype=float)
    return SplitStats(
        n=len(records),
        findings_mean=float(findings.mean()),
        findings_std=float(findings.std(ddof=0)),
        messages_mean=float(messages.mean()),
        messages_std=float(messages.std(ddof=0)),
    )


def corpus_stats(splits: Mapping[str, Sequence[CorpusRecord]]) -> dict[str, SplitStats]:
    """Per-split size and population mean/std of findings and messages."""
    return {name: split_stats(recs) for name, recs in splits.items()}


def render_stats(stats: Mapping[str, SplitStats]) -> str:
    lines = [f"{'split':<8} {'n':>6} {'findings':>16} {'messages':>16}"]
    for name, s in stats.items():
        lines.append(
            f"{name:<8} {s.n:>6} {s.findings_mean:>8.2f} ± {s.findings_std:<5.2f} "
            f"{s.messages_mean:>8.2f} ± {s.messages_std:<5.2f}"
        )
    return "\n".join(lines) + "\n"


# =============================================================================
# TRAINING PAIRS
# =============================================================================

@dataclass(frozen=True)
class TrainingPair:
    case_id: str
    input: str
    target: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"case_id": self.case_id, "input": self.input, "target": list(self.target)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingPair":
        return cls(case_id=data["case_id"], input=data["input"], target=tuple(data["target"]))


_ANNOTATION_MARKERS = re.compile(r"FINDINGS:|=(present|absent)\b")


def _id_pattern(kb: KnowledgeBase) -> Optional[re.Pattern]:
    ids = sorted(kb.findings, key=len, reverse=True)
    if not ids:
        return None
    return re.compile(r"(?<![\w-])(?:" + "|".join(re.escape(i) for i in ids) + r")(?![\w-])")


def training_pair(record: CorpusRecord, kb: KnowledgeBase) -> TrainingPair:
    return TrainingPair(
        case_id=record.case_id,
        input=plain_transcript(record.chat.messages),
        target=tuple(kb.disease(d).name for d in record.case.ddx.ids()),
    )


def check_leak_free(text: str, kb: KnowledgeBase, pattern: Optional[re.Pattern] = None) -> None:
    pattern = pattern if pattern is not None else _id_pattern(kb)
    hit = pattern.search(text) if pattern else None
    if hit:
        raise LabelLeakError(f"training input contains finding id {hit.group(0)}")
    marker = _ANNOTATION_MARKERS.search(text)
    if marker:
        raise LabelLeakError(f"training input contains an annotation marker: {marker.group(0)}")


def export_training_pairs(records: Iterable[CorpusRecord], path: Union[str, Path], kb: KnowledgeBase) -> int:
    """Write one leak-free (chat text, ordered DDx names) pair per record."""
    pattern = _id_pattern(kb)
    pairs = []
    for record in records:
        pair = training_pair(record, kb)
        check_leak_free(pair.input, kb, pattern)
        pairs.append(pair.to_dict())
    return write_jsonl(path, pairs)


def read_training_pairs(path: Union[str, Path]) -> list[TrainingPair]:
    return [TrainingPair.from_dict(d) for d in read_jsonl(path)]
