"""
Negative Examples

Diseases that sat in an intermediate differential during case simulation but
dropped out of the final one are candidate negatives for their case. Each is
paired with the case's retained chat and pre-screened by an LLM judge (is this
rare disease still a possible diagnosis?). Screened pairs go to
negatives.jsonl; a CSV sheet with empty reviewer columns is written next to
it for the manual pass.
"""

import csv
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .case_simulator import discarded_diagnoses
from .chat_simulator import plain_transcript
from .dataset_store import CorpusRecord
from .errors import TooFewSnapshotsError, UnparseableVerdictError
from .jsonl import write_jsonl
from .knowledge_base import KnowledgeBase
from .pool import WorkPool

logger = logging.getLogger(__name__)

REVIEW_COLUMNS = (
    "case_id",
    "seed_disease",
    "negative_disease",
    "negative_name",
    "screen_verdict",
    "screen_explanation",
    "reviewer_verdict",
    "reviewer_notes",
)


@dataclass(frozen=True)
class NegativeTarget:
    record: CorpusRecord
    disease_id: str


@dataclass(frozen=True)
class NegativeExample:
    case_id: str
    seed_disease: str
    negative_disease: str
    negative_name: str
    possible: bool               # screen verdict: still a possible diagnosis
    explanation: str
    transcript: str

    @property
    def kept(self) -> bool:
        return not self.possible

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "seed_disease": self.seed_disease,
            "negative_disease": self.negative_disease,
            "negative_name": self.negative_name,
            "possible": self.possible,
            "explanation": self.explanation,
            "transcript": self.transcript,
        }


def negative_targets(records: Iterable[CorpusRecord]) -> list[NegativeTarget]:
    targets = []
    for record in records:
        if record.trace is None:
            continue
        try:
            discarded = discarded_diagnoses(record.trace)
        except TooFewSnapshotsError:
            continue
        targets.extend(NegativeTarget(record, d) for d in discarded if d != record.disease_id)
    return targets


def parse_screen(text: str) -> tuple[bool, str]:
    """Strict ``VERDICT: yes|no`` line plus an optional EXPLANATION line."""
    verdict: Optional[bool] = None
    explanation = ""
    for line in text.strip().splitlines():
        key, sep, value = line.partition(":")
        if not sep:
            continue
        key, value = key.strip().upper(), value.strip()
        if key == "VERDICT":
            token = value.casefold()
            if token not in ("yes", "no"):
                raise UnparseableVerdictError(f"screen verdict must be yes or no, got {value[:40]!r}")
            verdict = token == "yes"
        elif key == "EXPLANATION":
            explanation = value
    if verdict is None:
        raise UnparseableVerdictError("screen response has no VERDICT line")
    return verdict, explanation


def screen_negative(llm, kb: KnowledgeBase, target: NegativeTarget) -> NegativeExample:
    name = kb.disease(target.disease_id).name
    transcript = plain_transcript(target.record.chat.messages)
    response = llm.ask("negative_screen", {"diagnosis": name, "transcript": transcript})
    possible, explanation = parse_screen(response.text)
    return NegativeExample(
        case_id=target.record.case_id,
        seed_disease=target.record.disease_id,
        negative_disease=target.disease_id,
        negative_name=name,
        possible=possible,
        explanation=explanation,
        transcript=transcript,
    )


def run_negatives(
    records: Sequence[CorpusRecord],
    kb: KnowledgeBase,
    llm,
    workers: int = 1,
) -> list[NegativeExample]:
    targets = negative_targets(records)
    logger.info("screening %d discarded diagnoses from %d records", len(targets), len(records))
    return WorkPool(workers, label="negatives").map(lambda t: screen_negative(llm, kb, t), targets)


def write_review_sheet(path: Union[str, Path], examples: Iterable[NegativeExample]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    count = 0
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(REVIEW_COLUMNS)
            for ex in examples:
                writer.writerow([
                    ex.case_id,
                    ex.seed_disease,
                    ex.negative_disease,
                    ex.negative_name,
                    "possible" if ex.possible else "not possible",
                    ex.explanation,
                    "",
                    "",
                ])
                count += 1
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return count


def write_negatives(out_dir: Union[str, Path], examples: Sequence[NegativeExample]) -> dict[str, int]:
    """negatives.jsonl holds every screened pair; the sheet lists the ones the
    screen did not reject."""
    out_dir = Path(out_dir)
    kept = [ex for ex in examples if ex.kept]
    return {
        "screened": write_jsonl(out_dir / "negatives.jsonl", (ex.to_dict() for ex in examples)),
        "for_review": write_review_sheet(out_dir / "negatives_review.csv", kept),
    }
