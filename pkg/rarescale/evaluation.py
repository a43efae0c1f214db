"""
Evaluation

Top-k / MRR metrics, the two LLM judges, the DDx prompt with optional rare
candidates, the two candidate backends, per-category breakdowns and the
report written by the ``eval-candidates`` and ``eval-ddx`` stages.

Lists are capped at 5 everywhere; a match beyond rank 5 scores 0.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .chat_simulator import plain_transcript
from .dataset_store import CorpusRecord
from .errors import (
    EmptyInputError,
    EvaluationError,
    LengthMismatchError,
    TooFewDifferencesError,
    UnknownEntityError,
    UnparseableLabelError,
    UnparseableResponseError,
    UnparseableVerdictError,
)
from .knowledge_base import KnowledgeBase, names_match, normalize_name
from .pool import WorkPool
from .providers.types import ChatTurnRequest
from .scorer import CaseFindings, ScoreWeights, rank_ddx
from .significance import wilcoxon_signed_rank
from .templates import load_template, render

logger = logging.getLogger(__name__)

MAX_LIST = 5

Matcher = Callable[[Sequence[str], str], Optional[int]]


# =============================================================================
# METRICS
# =============================================================================

def exact_match_rank(predictions: Sequence[str], gold: str) -> Optional[int]:
    """1-based rank of the first prediction naming ``gold``, within the cap."""
    for rank, name in enumerate(predictions[:MAX_LIST], 1):
        if names_match(name, gold):
            return rank
    return None


def reciprocal_rank(rank: Optional[int]) -> float:
    if rank is None or rank < 1 or rank > MAX_LIST:
        return 0.0
    return 1.0 / rank


@dataclass(frozen=True)
class RankMetrics:
    n: int
    top1: float
    top5: float
    mrr: float
    ranks: tuple[Optional[int], ...] = ()

    def to_dict(self) -> dict:
        return {"n": self.n, "top1": self.top1, "top5": self.top5, "mrr": self.mrr}


def metrics_from_ranks(ranks: Sequence[Optional[int]]) -> RankMetrics:
    if not ranks:
        raise EmptyInputError("no results to score")
    n = len(ranks)
    hits1 = sum(1 for r in ranks if r == 1)
    hits5 = sum(1 for r in ranks if r is not None and 1 <= r <= MAX_LIST)
    mrr = sum(reciprocal_rank(r) for r in ranks) / n
    return RankMetrics(n, hits1 / n, hits5 / n, mrr, tuple(ranks))


def topk_mrr(
    predictions: Sequence[Sequence[str]],
    golds: Sequence[str],
    matcher: Optional[Matcher] = None,
) -> RankMetrics:
    """Top-1, Top-5 and MRR of ranked name lists against gold names."""
    if len(predictions) != len(golds):
        raise LengthMismatchError(f"{len(predictions)} prediction lists for {len(golds)} gold names")
    matcher = matcher or exact_match_rank
    return metrics_from_ranks([matcher(p, g) for p, g in zip(predictions, golds)])


# =============================================================================
# JUDGES
# =============================================================================

class SimilarityLabel(str, Enum):
    UNRELATED = "unrelated"
    SOMEWHAT_RELATED = "somewhat related"
    RELEVANT = "relevant"
    EXTREMELY_RELEVANT = "extremely relevant"
    EXACT_MATCH = "exact match"


LABEL_ORDER = tuple(SimilarityLabel)


def parse_yes_no(text: str) -> bool:
    token = text.strip().casefold()
    if token == "yes":
        return True
    if token == "no":
        return False
    raise UnparseableVerdictError(f"judge verdict must be 'yes' or 'no', got {text.strip()[:60]!r}")


def parse_similarity(text: str) -> SimilarityLabel:
    token = " ".join(text.strip().casefold().split())
    try:
        return SimilarityLabel(token)
    except ValueError:
        raise UnparseableLabelError(f"unknown similarity label: {text.strip()[:60]!r}") from None


def judge_binary(llm, ddx: Sequence[str], seed_name: str) -> Optional[int]:
    """Ask the judge about each entry in rank order; first "yes" wins."""
    if len(ddx) > MAX_LIST:
        raise EvaluationError(f"ddx holds {len(ddx)} entries, at most {MAX_LIST} allowed")
    for rank, name in enumerate(ddx, 1):
        response = llm.ask("judge_binary", {"true_diagnosis": seed_name, "candidate": name})
        if parse_yes_no(response.text):
            return rank
    return None


def judge_matcher(llm) -> Matcher:
    def match(predictions: Sequence[str], gold: str) -> Optional[int]:
        return judge_binary(llm, list(predictions[:MAX_LIST]), gold)
    return match


def numbered(names: Sequence[str]) -> str:
    if not names:
        return "(empty)"
    return "\n".join(f"{i}. {name}" for i, name in enumerate(names, 1))


def judge_similarity(llm, ddx: Sequence[str], seed_name: str) -> SimilarityLabel:
    response = llm.ask("judge_similarity", {"true_diagnosis": seed_name, "ddx_list": numbered(ddx)})
    return parse_similarity(response.text)


def label_distribution(labels: Iterable[SimilarityLabel]) -> dict[str, int]:
    counts = {label.value: 0 for label in LABEL_ORDER}
    for label in labels:
        counts[SimilarityLabel(label).value] += 1
    return counts


# =============================================================================
# CANDIDATES AND DDX
# =============================================================================

@dataclass(frozen=True)
class CandidateList:
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.names) > MAX_LIST:
            raise EvaluationError(f"candidate list holds {len(self.names)} names, at most {MAX_LIST} allowed")
        folded = [normalize_name(n) for n in self.names]
        if len(set(folded)) != len(folded):
            raise EvaluationError(f"duplicate candidate names: {list(self.names)}")

    @classmethod
    def of(cls, names: Iterable[str]) -> "CandidateList":
        """Drop blanks and case-folded duplicates, keep the first 5."""
        seen: set[str] = set()
        kept: list[str] = []
        for name in names:
            name = name.strip()
            key = normalize_name(name)
            if not key or key in seen:
                continue
            seen.add(key)
            kept.append(name)
        return cls(tuple(kept[:MAX_LIST]))

    def __len__(self) -> int:
        return len(self.names)

    def __bool__(self) -> bool:
        return bool(self.names)


def _strip_bullet(line: str) -> str:
    line = line.strip()
    head, sep, rest = line.partition(".")
    if not sep:
        head, sep, rest = line.partition(")")
    if sep and head.strip().isdigit():
        return rest.strip()
    if line.startswith(("- ", "* ")):
        return line[2:].strip()
    return line


def parse_name_list(text: str, begin: str, end: str, require_markers: bool = True) -> list[str]:
    """Names between the ``begin``/``end`` lines, numbering and bullets removed."""
    lines = [line.strip() for line in text.strip().splitlines()]
    if begin in lines:
        start = lines.index(begin)
        try:
            stop = lines.index(end, start + 1)
        except ValueError:
            raise UnparseableResponseError(f"list has no {end} line") from None
        body = lines[start + 1:stop]
    elif require_markers:
        raise UnparseableResponseError(f"list has no {begin} line")
    else:
        body = lines
    return [name for name in (_strip_bullet(line) for line in body) if name]


def build_ddx_prompt(
    chat_text: str,
    candidates: Optional[CandidateList] = None,
    template_dir: Optional[str] = None,
) -> str:
    if not chat_text.strip():
        raise EvaluationError("chat text is empty")
    block = ""
    if candidates:
        listing = "\n".join(f"- {name}" for name in candidates.names)
        block = render(load_template("ddx_candidates", template_dir), {"candidates": listing})
    return render(load_template("ddx", template_dir), {"transcript": chat_text, "candidate_block": block})


@dataclass(frozen=True)
class DdxResult:
    names: tuple[str, ...]
    from_candidates: tuple[bool, ...]
    raw: str = ""
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.names) > MAX_LIST:
            raise EvaluationError(f"ddx holds {len(self.names)} entries, at most {MAX_LIST} allowed")
        if len(self.from_candidates) != len(self.names):
            raise EvaluationError("one source flag per ddx entry required")


def run_ddx(llm, chat_text: str, candidates: Optional[CandidateList] = None) -> DdxResult:
    prompt = build_ddx_prompt(chat_text, candidates, getattr(llm, "template_dir", None))
    response = llm.complete(ChatTurnRequest.user(prompt, tag="ddx"))
    names = parse_name_list(response.text, "BEGIN DDX", "END DDX")
    warnings: list[str] = []
    if len(names) > MAX_LIST:
        warnings.append(f"ddx truncated from {len(names)} to {MAX_LIST} entries")
        logger.warning(warnings[-1])
        names = names[:MAX_LIST]
    pool = candidates.names if candidates else ()
    flags = tuple(any(names_match(n, c) for c in pool) for n in names)
    return DdxResult(tuple(names), flags, response.text, tuple(warnings))


class ReferenceCandidates:
    """Expert-system candidates: the scorer's DDx over rare diseases only."""

    name = "reference"

    def __init__(self, kb: KnowledgeBase, weights: ScoreWeights):
        self.kb = kb
        self.weights = weights
        self._rare = kb.rare_disease_ids()

    def for_findings(self, findings: Optional[CaseFindings]) -> CandidateList:
        if findings is None:
            raise EvaluationError("reference candidates need the structured findings")
        ddx = rank_ddx(self.kb, self.weights, findings, MAX_LIST, self._rare)
        return CandidateList.of(self.kb.disease(d).name for d in ddx.ids())

    def generate(self, record: Union[CorpusRecord, CaseFindings]) -> CandidateList:
        if isinstance(record, CaseFindings):
            return self.for_findings(record)
        return self.for_findings(record.case.findings if record.case else None)


class ExternalCandidates:
    """Candidates from a model: the ``rare_candidates`` prompt, or ``raw``
    mode for a served candidate model that takes the chat text as-is."""

    name = "external"

    def __init__(self, llm, prompt: str = "rare_candidates"):
        self.llm = llm
        self.prompt = prompt

    def for_text(self, chat_text: str) -> CandidateList:
        if not chat_text.strip():
            raise EvaluationError("chat text is empty")
        if self.prompt == "raw":
            response = self.llm.complete(ChatTurnRequest.user(chat_text, tag="candidates"))
            names = parse_name_list(response.text, "BEGIN LIST", "END LIST", require_markers=False)
        else:
            response = self.llm.ask(self.prompt, {"transcript": chat_text})
            names = parse_name_list(response.text, "BEGIN LIST", "END LIST")
        return CandidateList.of(names)

    def generate(self, record: Union[CorpusRecord, str]) -> CandidateList:
        if isinstance(record, str):
            return self.for_text(record)
        return self.for_text(plain_transcript(record.chat.messages))


def generate_candidates(backend, record) -> CandidateList:
    return backend.generate(record)


# =============================================================================
# VERDICTS AND REPORTS
# =============================================================================

@dataclass(frozen=True)
class Verdict:
    """Audit line for one evaluated record."""
    case_id: str
    disease_id: str
    gold: str
    predictions: tuple[str, ...]
    rank: Optional[int]
    from_candidates: tuple[bool, ...] = ()
    candidates: tuple[str, ...] = ()
    label: Optional[SimilarityLabel] = None
    warnings: tuple[str, ...] = ()

    @property
    def reciprocal_rank(self) -> float:
        return reciprocal_rank(self.rank)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "disease_id": self.disease_id,
            "gold": self.gold,
            "predictions": list(self.predictions),
            "from_candidates": list(self.from_candidates),
            "candidates": list(self.candidates),
            "rank": self.rank,
            "reciprocal_rank": self.reciprocal_rank,
            "label": self.label.value if self.label else None,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        return cls(
            case_id=data["case_id"],
            disease_id=data["disease_id"],
            gold=data["gold"],
            predictions=tuple(data.get("predictions", ())),
            rank=data.get("rank"),
            from_candidates=tuple(data.get("from_candidates", ())),
            candidates=tuple(data.get("candidates", ())),
            label=SimilarityLabel(data["label"]) if data.get("label") else None,
            warnings=tuple(data.get("warnings", ())),
        )


@dataclass(frozen=True)
class CategoryRow:
    category: str
    metrics: RankMetrics

    def to_dict(self) -> dict:
        return {"category": self.category, **self.metrics.to_dict()}


def category_breakdown(results: Iterable[Verdict], kb: KnowledgeBase) -> list[CategoryRow]:
    """Per-category metrics; a result counts once for each of its disease's categories."""
    ranks: dict[str, list[Optional[int]]] = {}
    for result in results:
        if result.disease_id not in kb.diseases:
            raise UnknownEntityError(f"unknown disease: {result.disease_id}")
        for category in kb.disease(result.disease_id).categories:
            ranks.setdefault(category, []).append(result.rank)
    return [CategoryRow(c, metrics_from_ranks(ranks[c])) for c in sorted(ranks)]


def paired_reciprocal_ranks(
    current: Sequence[Verdict],
    baseline: Sequence[Verdict],
) -> tuple[list[str], list[float], list[float]]:
    """Reciprocal ranks of the records both runs evaluated, by case id."""
    base = {v.case_id: v for v in baseline}
    shared = sorted(v.case_id for v in current if v.case_id in base)
    if len(shared) != len(current) or len(shared) != len(base):
        logger.warning(
            "baseline pairs %d of %d records (baseline holds %d)",
            len(shared), len(current), len(base),
        )
    mine = {v.case_id: v for v in current}
    return (
        shared,
        [mine[c].reciprocal_rank for c in shared],
        [base[c].reciprocal_rank for c in shared],
    )


@dataclass
class EvalReport:
    name: str
    metrics: RankMetrics
    labels: dict[str, int] = field(default_factory=dict)
    categories: list[CategoryRow] = field(default_factory=list)
    p_value: Optional[float] = None
    significance: Optional[dict] = None
    baseline: Optional[str] = None
    notes: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.metrics.n

    def compare(self, current: Sequence[Verdict], baseline: Sequence[Verdict], label: str) -> None:
        """Two-sided signed-rank test on paired reciprocal ranks."""
        self.baseline = label
        _, mine, theirs = paired_reciprocal_ranks(current, baseline)
        try:
            result = wilcoxon_signed_rank(mine, theirs)
        except TooFewDifferencesError as e:
            self.notes.append(f"no significance test: {e}")
            return
        self.p_value = result.p_value
        self.significance = result.to_dict()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            **self.metrics.to_dict(),
            "labels": dict(self.labels),
            "categories": [row.to_dict() for row in self.categories],
            "p_value": self.p_value,
            "significance": self.significance,
            "baseline": self.baseline,
            "notes": list(self.notes),
        }

    def render(self) -> str:
        m = self.metrics
        lines = [
            f"{self.name}: n={m.n}",
            f"  top1={m.top1:.4f}  top5={m.top5:.4f}  mrr={m.mrr:.4f}",
        ]
        if self.baseline:
            p = "n/a" if self.p_value is None else f"{self.p_value:.4g}"
            lines.append(f"  vs {self.baseline}: p={p}")
        if any(self.labels.values()):
            lines.append("  similarity labels:")
            lines.extend(f"    {label:<20} {count}" for label, count in self.labels.items())
        if self.categories:
            lines.append(f"  {'category':<20} {'n':>5} {'top1':>7} {'top5':>7} {'mrr':>7}")
            for row in self.categories:
                c = row.metrics
                lines.append(f"  {row.category:<20} {c.n:>5} {c.top1:>7.4f} {c.top5:>7.4f} {c.mrr:>7.4f}")
        lines.extend(f"  note: {note}" for note in self.notes)
        return "\n".join(lines) + "\n"


def build_report(name: str, verdicts: Sequence[Verdict], kb: KnowledgeBase) -> EvalReport:
    labels = [v.label for v in verdicts if v.label is not None]
    return EvalReport(
        name=name,
        metrics=metrics_from_ranks([v.rank for v in verdicts]),
        labels=label_distribution(labels) if labels else {},
        categories=category_breakdown(verdicts, kb),
    )


# =============================================================================
# BATCH EVALUATION
# =============================================================================

def _gold(kb: KnowledgeBase, record: CorpusRecord) -> str:
    return kb.disease(record.disease_id).name


def _rank(judge, predictions: Sequence[str], gold: str) -> Optional[int]:
    if judge is None:
        return exact_match_rank(predictions, gold)
    return judge_binary(judge, list(predictions), gold)


def evaluate_candidates(
    records: Sequence[CorpusRecord],
    kb: KnowledgeBase,
    backend,
    judge=None,
    similarity: bool = False,
    workers: int = 1,
) -> tuple[EvalReport, list[Verdict]]:
    """Score candidate lists against the seed disease (exact match)."""
    if not records:
        raise EmptyInputError("no records to evaluate")

    def one(record: CorpusRecord) -> Verdict:
        gold = _gold(kb, record)
        names = backend.generate(record).names
        label = judge_similarity(judge, names, gold) if similarity and judge is not None else None
        return Verdict(
            case_id=record.case_id,
            disease_id=record.disease_id,
            gold=gold,
            predictions=names,
            rank=exact_match_rank(names, gold),
            label=label,
        )

    verdicts = WorkPool(workers, label="eval-candidates").map(one, records)
    return build_report(f"candidates:{backend.name}", verdicts, kb), verdicts


def evaluate_ddx(
    records: Sequence[CorpusRecord],
    kb: KnowledgeBase,
    llm,
    judge=None,
    candidates=None,
    similarity: bool = True,
    workers: int = 1,
) -> tuple[EvalReport, list[Verdict]]:
    """Final DDx per record, optionally with injected rare candidates.

    With no judge, ranks fall back to exact name matching and no similarity
    labels are collected.
    """
    if not records:
        raise EmptyInputError("no records to evaluate")

    def one(record: CorpusRecord) -> Verdict:
        gold = _gold(kb, record)
        chat_text = plain_transcript(record.chat.messages)
        pool = candidates.generate(record) if candidates is not None else None
        result = run_ddx(llm, chat_text, pool)
        label = judge_similarity(judge, result.names, gold) if similarity and judge is not None else None
        return Verdict(
            case_id=record.case_id,
            disease_id=record.disease_id,
            gold=gold,
            predictions=result.names,
            rank=_rank(judge, result.names, gold),
            from_candidates=result.from_candidates,
            candidates=pool.names if pool else (),
            label=label,
            warnings=result.warnings,
        )

    verdicts = WorkPool(workers, label="eval-ddx").map(one, records)
    name = f"ddx+{candidates.name}" if candidates is not None else "ddx"
    return build_report(name, verdicts, kb), verdicts


def read_verdicts(rows: Iterable[Mapping]) -> list[Verdict]:
    return [Verdict.from_dict(dict(r)) for r in rows]
